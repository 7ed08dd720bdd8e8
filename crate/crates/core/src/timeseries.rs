//! Basin CSV ingestion, unit conversion and warm-up/calibration/validation windows.
//!
//! Input files follow the CAMELS layout flattened to one CSV per basin:
//!
//! ```text
//! date,precip_mm,tmin_C,tmax_C,flow
//! 1980-01-01,0.0,-3.1,4.2,112.0
//! ```
//!
//! Flow values at or below [`MISSING_FLOW_SENTINEL`] (the `-999` convention of
//! the CAMELS streamflow files) and empty/`NaN` cells are read as missing.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pet::{self, PetError};

/// Any flow at or below this value is a missing-data marker.
pub const MISSING_FLOW_SENTINEL: f64 = -999.0;

/// Value written back for missing flows.
pub const MISSING_FLOW_OUTPUT: f64 = -9999.0;

const CUBIC_METRES_PER_CUBIC_FOOT: f64 = 0.0283168;
const SECONDS_PER_DAY: f64 = 86400.0;

/// Shortest accepted warm-up, in days.
pub const MIN_WARMUP_DAYS: i64 = 365;

const BASIN_COLUMNS: [&str; 5] = ["date", "precip_mm", "tmin_C", "tmax_C", "flow"];

#[derive(Error, Debug)]
pub enum DataError {
    #[error("schema error: missing column '{0}'")]
    Schema(String),
    #[error("continuity error: expected {expected} but found {found}")]
    Continuity { expected: NaiveDate, found: NaiveDate },
    #[error("continuity error: duplicate date {0}")]
    Duplicate(NaiveDate),
    #[error("parse error at row {row}, column '{column}': '{value}'")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("ordering error: tmin {tmin} > tmax {tmax}")]
    Ordering { tmin: f64, tmax: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error(transparent)]
    Pet(#[from] PetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinMeta {
    pub basin_id: String,
    /// Degrees north.
    pub latitude: f64,
    /// km².
    pub area_km2: f64,
}

impl BasinMeta {
    pub fn new(basin_id: impl Into<String>, latitude: f64, area_km2: f64) -> Result<Self, DataError> {
        if !(-90.0..=90.0).contains(&latitude) {
            return Err(DataError::Domain(format!("latitude {latitude} outside [-90, 90]")));
        }
        if !(area_km2 > 0.0) || !area_km2.is_finite() {
            return Err(DataError::Domain(format!("basin area {area_km2} must be > 0")));
        }
        Ok(Self {
            basin_id: basin_id.into(),
            latitude,
            area_km2,
        })
    }
}

/// Unit of the `flow` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowUnit {
    /// ft³/s, normalised by basin area.
    #[default]
    Cfs,
    /// Already a depth rate.
    MmDay,
}

impl fmt::Display for FlowUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowUnit::Cfs => f.write_str("cfs"),
            FlowUnit::MmDay => f.write_str("mm_day"),
        }
    }
}

impl FromStr for FlowUnit {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cfs" => Ok(FlowUnit::Cfs),
            "mm_day" => Ok(FlowUnit::MmDay),
            other => Err(DataError::Domain(format!("unknown flow unit '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDailyRecord {
    pub date: NaiveDate,
    pub precip: f64,
    pub tmin: f64,
    pub tmax: f64,
    /// `None` marks a missing observation.
    pub flow: Option<f64>,
}

pub fn mean_daily_temp(tmin: f64, tmax: f64) -> Result<f64, DataError> {
    if tmin > tmax {
        return Err(DataError::Ordering { tmin, tmax });
    }
    Ok((tmin + tmax) / 2.0)
}

/// Converts a volumetric flow in ft³/s into a runoff depth over the basin in mm/day.
pub fn flow_to_mm_per_day(flow: f64, area_km2: f64) -> Result<f64, DataError> {
    if !(area_km2 > 0.0) {
        return Err(DataError::Domain(format!("basin area {area_km2} must be > 0")));
    }
    if flow < 0.0 {
        return Err(DataError::Domain(format!("negative flow {flow}")));
    }
    Ok(flow * CUBIC_METRES_PER_CUBIC_FOOT * SECONDS_PER_DAY / (area_km2 * 1.0e6) * 1000.0)
}

/// Inverse of [`flow_to_mm_per_day`].
pub fn mm_per_day_to_flow(depth: f64, area_km2: f64) -> Result<f64, DataError> {
    if !(area_km2 > 0.0) {
        return Err(DataError::Domain(format!("basin area {area_km2} must be > 0")));
    }
    Ok(depth / 1000.0 * area_km2 * 1.0e6 / SECONDS_PER_DAY / CUBIC_METRES_PER_CUBIC_FOOT)
}

fn parse_date(row: usize, raw: &str) -> Result<NaiveDate, DataError> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| DataError::Parse {
        row,
        column: "date".into(),
        value: raw.into(),
    })
}

fn parse_number(row: usize, column: &str, raw: &str) -> Result<f64, DataError> {
    let value: f64 = raw.trim().parse().map_err(|_| DataError::Parse {
        row,
        column: column.into(),
        value: raw.into(),
    })?;
    if !value.is_finite() {
        return Err(DataError::Parse {
            row,
            column: column.into(),
            value: raw.into(),
        });
    }
    Ok(value)
}

fn parse_flow(row: usize, raw: &str) -> Result<Option<f64>, DataError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let value = parse_number(row, "flow", trimmed)?;
    if value <= MISSING_FLOW_SENTINEL {
        Ok(None)
    } else if value < 0.0 {
        Err(DataError::Parse {
            row,
            column: "flow".into(),
            value: raw.into(),
        })
    } else {
        Ok(Some(value))
    }
}

/// Parses basin records from any reader. Rows are sorted by date and must form a
/// gap-free daily calendar. Row numbers in errors count the header as row 1.
pub fn read_basin_records<R: Read>(reader: R) -> Result<Vec<RawDailyRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(BASIN_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::Schema(name.to_string()))?;
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 2;
        let row = row?;
        let field = |k: usize| row.get(idx[k]).unwrap_or("");
        let date = parse_date(row_no, field(0))?;
        let precip = parse_number(row_no, BASIN_COLUMNS[1], field(1))?;
        if precip < 0.0 {
            return Err(DataError::Parse {
                row: row_no,
                column: BASIN_COLUMNS[1].into(),
                value: field(1).into(),
            });
        }
        let tmin = parse_number(row_no, BASIN_COLUMNS[2], field(2))?;
        let tmax = parse_number(row_no, BASIN_COLUMNS[3], field(3))?;
        if tmin > tmax {
            return Err(DataError::Ordering { tmin, tmax });
        }
        let flow = parse_flow(row_no, field(4))?;
        records.push(RawDailyRecord {
            date,
            precip,
            tmin,
            tmax,
            flow,
        });
    }

    records.sort_by_key(|r| r.date);
    for pair in records.windows(2) {
        let expected = pair[0].date.succ_opt().expect("date overflow");
        if pair[1].date == pair[0].date {
            return Err(DataError::Duplicate(pair[1].date));
        }
        if pair[1].date != expected {
            return Err(DataError::Continuity {
                expected,
                found: pair[1].date,
            });
        }
    }
    Ok(records)
}

/// Loads one basin file. The flow column is kept in its native unit here; see
/// [`ForcingSeries::from_records`] for the conversion.
pub fn load_basin(path: &Path, meta: &BasinMeta) -> Result<Vec<RawDailyRecord>, DataError> {
    let file = std::fs::File::open(path)?;
    let records = read_basin_records(file)?;
    log::debug!(
        "basin {}: read {} rows from {}",
        meta.basin_id,
        records.len(),
        path.display()
    );
    Ok(records)
}

/// Writes records in the input layout. Missing flows become [`MISSING_FLOW_OUTPUT`].
pub fn write_basin_records<W: Write>(records: &[RawDailyRecord], writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(BASIN_COLUMNS)?;
    for r in records {
        wtr.write_record(&[
            r.date.format("%Y-%m-%d").to_string(),
            r.precip.to_string(),
            r.tmin.to_string(),
            r.tmax.to_string(),
            r.flow.unwrap_or(MISSING_FLOW_OUTPUT).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct MetaRow {
    basin_id: String,
    lat_deg: f64,
    area_km2: f64,
}

/// Reads a `basin_id,lat_deg,area_km2` metadata table.
pub fn read_basin_meta<R: Read>(reader: R) -> Result<Vec<BasinMeta>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: MetaRow = row?;
        out.push(BasinMeta::new(row.basin_id, row.lat_deg, row.area_km2)?);
    }
    Ok(out)
}

pub fn load_basin_meta(path: &Path) -> Result<Vec<BasinMeta>, DataError> {
    read_basin_meta(std::fs::File::open(path)?)
}

/// Model-ready daily forcing: precipitation, PET and observed flow, all in mm/day.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSeries {
    pub dates: Vec<NaiveDate>,
    pub precip: Vec<f64>,
    pub pet: Vec<f64>,
    pub q_obs: Vec<Option<f64>>,
}

impl ForcingSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        precip: Vec<f64>,
        pet: Vec<f64>,
        q_obs: Vec<Option<f64>>,
    ) -> Result<Self, DataError> {
        let n = dates.len();
        if precip.len() != n || pet.len() != n || q_obs.len() != n {
            return Err(DataError::Domain(format!(
                "array lengths differ: dates {n}, precip {}, pet {}, q_obs {}",
                precip.len(),
                pet.len(),
                q_obs.len()
            )));
        }
        if let Some(bad) = precip.iter().chain(&pet).find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(DataError::Domain(format!("forcing value {bad} must be finite and >= 0")));
        }
        if let Some(bad) = q_obs.iter().flatten().find(|v| !(**v >= 0.0)) {
            return Err(DataError::Domain(format!("observed flow {bad} must be >= 0")));
        }
        for pair in dates.windows(2) {
            if pair[0].succ_opt() != Some(pair[1]) {
                return Err(DataError::Continuity {
                    expected: pair[0].succ_opt().expect("date overflow"),
                    found: pair[1],
                });
            }
        }
        Ok(Self {
            dates,
            precip,
            pet,
            q_obs,
        })
    }

    /// Builds forcing from raw records: mean temperature, Oudin PET at the basin
    /// latitude, and flow converted to mm/day.
    pub fn from_records(
        records: &[RawDailyRecord],
        meta: &BasinMeta,
        unit: FlowUnit,
    ) -> Result<Self, DataError> {
        let lat_rad = meta.latitude.to_radians();
        let mut dates = Vec::with_capacity(records.len());
        let mut precip = Vec::with_capacity(records.len());
        let mut pet_series = Vec::with_capacity(records.len());
        let mut q_obs = Vec::with_capacity(records.len());
        for r in records {
            let ta = mean_daily_temp(r.tmin, r.tmax)?;
            let ctx = pet::SolarContext::new(lat_rad, r.date.ordinal())?;
            let re = pet::extraterrestrial_radiation(&ctx);
            dates.push(r.date);
            precip.push(r.precip);
            pet_series.push(pet::oudin_pet(ta, re)?);
            q_obs.push(match (r.flow, unit) {
                (None, _) => None,
                (Some(f), FlowUnit::Cfs) => Some(flow_to_mm_per_day(f, meta.area_km2)?),
                (Some(f), FlowUnit::MmDay) => Some(f),
            });
        }
        Self::new(dates, precip, pet_series, q_obs)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let offset = (date - first).num_days();
        (offset >= 0 && (offset as usize) < self.len()).then_some(offset as usize)
    }

    pub fn view(&self, start: usize, end: usize) -> ForcingView<'_> {
        ForcingView {
            dates: &self.dates[start..end],
            precip: &self.precip[start..end],
            pet: &self.pet[start..end],
            q_obs: &self.q_obs[start..end],
        }
    }

    /// Audit dump: `date,precip_mm,pet_mm,q_obs_mm` (missing flow as an empty cell).
    pub fn write_csv<W: Write>(&self, writer: W, header_comment: Option<&str>) -> Result<(), DataError> {
        let mut writer = writer;
        if let Some(c) = header_comment {
            writeln!(writer, "# {c}")?;
        }
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["date", "precip_mm", "pet_mm", "q_obs_mm"])?;
        for i in 0..self.len() {
            wtr.write_record(&[
                self.dates[i].format("%Y-%m-%d").to_string(),
                self.precip[i].to_string(),
                self.pet[i].to_string(),
                self.q_obs[i].map(|q| q.to_string()).unwrap_or_default(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Borrowed, contiguous slice of a [`ForcingSeries`].
#[derive(Debug, Clone, Copy)]
pub struct ForcingView<'a> {
    pub dates: &'a [NaiveDate],
    pub precip: &'a [f64],
    pub pet: &'a [f64],
    pub q_obs: &'a [Option<f64>],
}

impl ForcingView<'_> {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Inclusive calendar-day range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, DataError> {
        if end < start {
            return Err(DataError::Bounds(format!("range end {end} before start {start}")));
        }
        Ok(Self { start, end })
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSplit {
    pub warmup: DateRange,
    pub calibration: DateRange,
    pub validation: DateRange,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

impl PeriodSplit {
    /// Checks contiguity, ordering and the warm-up minimum.
    pub fn new(warmup: DateRange, calibration: DateRange, validation: DateRange) -> Result<Self, DataError> {
        if warmup.days() < MIN_WARMUP_DAYS {
            return Err(DataError::Bounds(format!(
                "warm-up of {} days is shorter than the required {MIN_WARMUP_DAYS}",
                warmup.days()
            )));
        }
        if warmup.end.succ_opt() != Some(calibration.start) {
            return Err(DataError::Bounds(format!(
                "calibration must start the day after warm-up ends ({}), got {}",
                warmup.end, calibration.start
            )));
        }
        if calibration.end.succ_opt() != Some(validation.start) {
            return Err(DataError::Bounds(format!(
                "validation must start the day after calibration ends ({}), got {}",
                calibration.end, validation.start
            )));
        }
        Ok(Self {
            warmup,
            calibration,
            validation,
        })
    }

    /// Warm-up 1980–1981, calibration 1982–1997, validation 1998–2013.
    pub fn camels_protocol() -> Self {
        Self::new(
            DateRange::new(ymd(1980, 1, 1), ymd(1981, 12, 31)).unwrap(),
            DateRange::new(ymd(1982, 1, 1), ymd(1997, 12, 31)).unwrap(),
            DateRange::new(ymd(1998, 1, 1), ymd(2013, 12, 31)).unwrap(),
        )
        .expect("protocol split is valid")
    }

    pub fn start(&self) -> NaiveDate {
        self.warmup.start
    }

    pub fn end(&self) -> NaiveDate {
        self.validation.end
    }

    /// Index bounds `[warmup, calibration, validation, end)` within `series`.
    pub fn indices(&self, series: &ForcingSeries) -> Result<SplitIndices, DataError> {
        let locate = |d: NaiveDate| {
            series.index_of(d).ok_or_else(|| {
                DataError::Bounds(format!(
                    "date {d} outside series {}..{}",
                    series.dates.first().map(|d| d.to_string()).unwrap_or_default(),
                    series.dates.last().map(|d| d.to_string()).unwrap_or_default()
                ))
            })
        };
        let warmup = locate(self.warmup.start)?;
        let calibration = locate(self.calibration.start)?;
        let validation = locate(self.validation.start)?;
        let end = locate(self.validation.end)? + 1;
        Ok(SplitIndices {
            warmup,
            calibration,
            validation,
            end,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitIndices {
    pub warmup: usize,
    pub calibration: usize,
    pub validation: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitViews<'a> {
    pub warmup: ForcingView<'a>,
    pub calibration: ForcingView<'a>,
    pub validation: ForcingView<'a>,
}

pub fn split<'a>(series: &'a ForcingSeries, periods: &PeriodSplit) -> Result<SplitViews<'a>, DataError> {
    let ix = periods.indices(series)?;
    Ok(SplitViews {
        warmup: series.view(ix.warmup, ix.calibration),
        calibration: series.view(ix.calibration, ix.validation),
        validation: series.view(ix.validation, ix.end),
    })
}
