//! The batch protocol: calibrate every (basin, variant, loss) combination,
//! score the calibration and validation periods, and write the artifact tree.
//!
//! Artifact tree under `output_dir`:
//!
//! ```text
//! manifest.json          config hash, seed, versions, conventions, skipped basins
//! config.toml            the resolved configuration
//! parameters.csv         one row per calibrated parameter set
//! scores.csv             one row per (run, period)
//! paired_scores.csv      quantile-calibrated vs squared-error-calibrated scores
//! crossings.csv          quantile crossing rates for adjacent levels
//! crossing_days.csv      the dates on which those crossings occur
//! simulations/<id>.csv   observed flow and every run's simulation
//! forcing/<id>.csv       model-ready forcing, mm/day
//! ```
//!
//! Every CSV begins with a `# manifest_hash=<hex>` line.

mod config;
mod output;
mod plot;
mod summary;

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BasinSelection, ExperimentConfig, PeriodConfig, DATA_ROOT_ENV};
pub use plot::{emit_plot_data, PlotSelection};
pub use summary::{
    read_scores, summarize, summarize_run, write_summary, Exclusion, HistogramBin, MedianCell, RelativeScore,
    SummaryTables, HISTOGRAM_BIN_WIDTH, HISTOGRAM_LIMIT,
};

use crate::calibration::{calibrate, CalibrationResult};
use crate::model::{simulate, ModelVariant};
use crate::scoring::{self, LossSpec, Period, ScoreRecord};
use crate::timeseries::{load_basin, load_basin_meta, BasinMeta, ForcingSeries, PeriodSplit};
use output::{create_csv, finish, fmt_opt};

#[derive(Error, Debug)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    /// Process exit code: 1 config, 2 data or selection, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Data(_) | ExperimentError::Selection(_) => 2,
            ExperimentError::Runtime(_) | ExperimentError::Io(_) | ExperimentError::Csv(_) => 3,
        }
    }
}

pub const MASKING_POLICY: &str =
    "days without an observed flow are dropped from every score; all runs of a basin share one mask per period";
pub const COVERAGE_TIES: &str = "an observation equal to the simulation counts one half";
pub const MEDIAN_CONVENTION: &str = "even counts average the two middle values";
pub const HISTOGRAM_CONVENTION: &str =
    "validation relative scores pooled over quantile levels per model; 0.05 bins on [-0.5, 0.5]; values beyond the limits counted in the edge bins; raw values kept in relative_scores.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecord {
    pub basin_id: String,
    pub model: String,
    pub loss_kind: String,
    pub level: Option<f64>,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
    pub x5: Option<f64>,
    pub x6: Option<f64>,
    pub score_calib: f64,
    pub converged: bool,
    pub n_evals: usize,
}

/// Scores of a quantile-calibrated run and of the squared-error-calibrated run
/// of the same model, both measured with that quantile's loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedScore {
    pub basin_id: String,
    pub model: String,
    pub level: f64,
    pub period: Period,
    pub score_quantile_calibrated: f64,
    pub score_squared_error_calibrated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingRecord {
    pub basin_id: String,
    pub model: String,
    pub level_low: f64,
    pub level_high: f64,
    pub period: Period,
    pub crossing_rate: f64,
    pub n_days: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedBasin {
    pub basin_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub masking: String,
    pub coverage_ties: String,
    pub median: String,
    pub histogram: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            masking: MASKING_POLICY.into(),
            coverage_ties: COVERAGE_TIES.into(),
            median: MEDIAN_CONVENTION.into(),
            histogram: HISTOGRAM_CONVENTION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_hash: String,
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub conventions: Conventions,
    pub basins: Vec<String>,
    pub skipped: Vec<SkippedBasin>,
    pub parameter_rows: usize,
    pub score_rows: usize,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self, ExperimentError> {
        let path = run_dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| ExperimentError::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display())))
    }
}

/// A loaded basin ready for calibration.
#[derive(Debug, Clone)]
pub struct PreparedBasin {
    pub meta: BasinMeta,
    pub forcing: ForcingSeries,
}

/// Outcome of one calibration job.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub basin: usize,
    pub variant: ModelVariant,
    pub spec: LossSpec,
    pub calibration: CalibrationResult,
    /// Calibration then validation days.
    pub q_sim: Vec<f64>,
    pub scores: Vec<ScoreRecord>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    pub parameters: Vec<ParameterRecord>,
    pub scores: Vec<ScoreRecord>,
}

pub fn column_name(variant: ModelVariant, spec: &LossSpec) -> String {
    format!("{}_{}", variant.name(), spec.label())
}

/// Loads the basins named by the config. Basins that cannot be used are
/// returned separately with the reason.
pub fn load_basins(config: &ExperimentConfig) -> Result<(Vec<PreparedBasin>, Vec<SkippedBasin>), ExperimentError> {
    let meta_path = config.metadata_path();
    let metas = load_basin_meta(&meta_path)
        .map_err(|e| ExperimentError::Data(format!("basin metadata {}: {e}", meta_path.display())))?;
    let periods = config.split()?;

    let wanted: Vec<String> = match &config.basins {
        BasinSelection::All => metas.iter().map(|m| m.basin_id.clone()).collect(),
        BasinSelection::List(ids) => ids.clone(),
    };

    let mut ready = Vec::new();
    let mut skipped = Vec::new();
    for id in wanted {
        match prepare_basin(config, &metas, &id, &periods) {
            Ok(b) => ready.push(b),
            Err(reason) => {
                log::warn!("skipping basin {id}: {reason}");
                skipped.push(SkippedBasin { basin_id: id, reason });
            }
        }
    }
    Ok((ready, skipped))
}

fn prepare_basin(
    config: &ExperimentConfig,
    metas: &[BasinMeta],
    id: &str,
    periods: &PeriodSplit,
) -> Result<PreparedBasin, String> {
    let meta = metas
        .iter()
        .find(|m| m.basin_id == id)
        .ok_or_else(|| "no entry in the metadata table".to_string())?;
    let path = config.data_dir.join(format!("{id}.csv"));
    let records = load_basin(&path, meta).map_err(|e| format!("{}: {e}", path.display()))?;
    let full = ForcingSeries::from_records(&records, meta, config.flow_unit).map_err(|e| e.to_string())?;
    let ix = periods.indices(&full).map_err(|e| e.to_string())?;
    let forcing = ForcingSeries::new(
        full.dates[ix.warmup..ix.end].to_vec(),
        full.precip[ix.warmup..ix.end].to_vec(),
        full.pet[ix.warmup..ix.end].to_vec(),
        full.q_obs[ix.warmup..ix.end].to_vec(),
    )
    .map_err(|e| e.to_string())?;
    for (name, a, b) in [
        ("calibration", ix.calibration, ix.validation),
        ("validation", ix.validation, ix.end),
    ] {
        if full.q_obs[a..b].iter().all(Option::is_none) {
            return Err(format!("no observed flow in the {name} period"));
        }
    }
    Ok(PreparedBasin {
        meta: meta.clone(),
        forcing,
    })
}

/// Runs one calibration job and scores both periods with the job's own loss.
pub fn run_job(
    basin: &PreparedBasin,
    basin_index: usize,
    variant: ModelVariant,
    spec: LossSpec,
    config: &ExperimentConfig,
    periods: &PeriodSplit,
) -> Result<RunOutcome, ExperimentError> {
    let id = &basin.meta.basin_id;
    let fail = |e: &dyn std::fmt::Display| ExperimentError::Runtime(format!("{id} {variant} {spec}: {e}"));
    let mut options = config.calibration;
    options.seed = config.seed;
    let cal = calibrate(variant, &basin.forcing, periods, spec, &options).map_err(|e| fail(&e))?;
    let run = simulate(&cal.params, &basin.forcing, periods).map_err(|e| fail(&e))?;
    let ix = periods.indices(&basin.forcing).map_err(|e| fail(&e))?;
    let n_cal = ix.validation - ix.calibration;

    let mut scores = Vec::with_capacity(2);
    for (period, sim, obs) in [
        (Period::Calibration, &run.q_sim[..n_cal], &basin.forcing.q_obs[ix.calibration..ix.validation]),
        (Period::Validation, &run.q_sim[n_cal..], &basin.forcing.q_obs[ix.validation..ix.end]),
    ] {
        let (avg, n) = scoring::average_score(sim, obs, &spec).map_err(|e| fail(&e))?;
        let cov = scoring::coverage(sim, obs).map_err(|e| fail(&e))?;
        scores.push(ScoreRecord {
            basin_id: id.clone(),
            model: variant.name().to_string(),
            loss_kind: spec.kind().to_string(),
            level: spec.level(),
            period,
            avg_score: avg,
            coverage: cov,
            n_days: n,
        });
    }
    log::info!(
        "{id} {variant} {spec}: calibration score {:.6} after {} evaluations",
        cal.score,
        cal.n_evals
    );
    Ok(RunOutcome {
        basin: basin_index,
        variant,
        spec,
        calibration: cal,
        q_sim: run.q_sim,
        scores,
    })
}

fn run_all_jobs(
    basins: &[PreparedBasin],
    config: &ExperimentConfig,
    periods: &PeriodSplit,
) -> Result<Vec<RunOutcome>, ExperimentError> {
    let specs = config.loss_specs();
    let mut jobs: Vec<(usize, ModelVariant, LossSpec)> = Vec::new();
    for b in 0..basins.len() {
        for &v in &config.variants {
            jobs.extend(specs.iter().map(|&s| (b, v, s)));
        }
    }
    let work = |&(b, v, s): &(usize, ModelVariant, LossSpec)| run_job(&basins[b], b, v, s, config, periods);

    #[cfg(feature = "parallel")]
    let results: Vec<Result<RunOutcome, ExperimentError>> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(work).collect())
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<RunOutcome, ExperimentError>> = jobs.iter().map(work).collect();

    // `collect` keeps job order, so the output order never depends on scheduling.
    results.into_iter().collect()
}

/// Runs the whole protocol and writes the artifact tree.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary, ExperimentError> {
    config.validate()?;
    let periods = config.split()?;
    let hash = config.manifest_hash();
    let (basins, skipped) = load_basins(config)?;
    if basins.is_empty() {
        return Err(ExperimentError::Data("no usable basins".into()));
    }
    log::info!(
        "running {} basins x {} variants x {} losses",
        basins.len(),
        config.variants.len(),
        config.loss_specs().len()
    );
    let outcomes = run_all_jobs(&basins, config, &periods)?;

    let out = &config.output_dir;
    std::fs::create_dir_all(out)?;
    let parameters = write_parameters(out, &hash, &basins, &outcomes)?;
    let scores: Vec<ScoreRecord> = outcomes.iter().flat_map(|o| o.scores.iter().cloned()).collect();
    write_rows(&out.join("scores.csv"), &hash, &scores)?;
    write_rows(&out.join("paired_scores.csv"), &hash, &paired_scores(&basins, &outcomes, &periods)?)?;
    write_crossings(out, &hash, &basins, &outcomes, config, &periods)?;
    for (b, basin) in basins.iter().enumerate() {
        let mine: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.basin == b).collect();
        write_simulations(out, &hash, basin, &mine, &periods)?;
        let path = out.join("forcing").join(format!("{}.csv", basin.meta.basin_id));
        std::fs::create_dir_all(path.parent().expect("has parent"))?;
        let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        basin
            .forcing
            .write_csv(file, Some(&format!("manifest_hash={hash}")))
            .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    }

    let manifest = Manifest {
        manifest_hash: hash,
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        config: config.clone(),
        conventions: Conventions::default(),
        basins: basins.iter().map(|b| b.meta.basin_id.clone()).collect(),
        skipped,
        parameter_rows: parameters.len(),
        score_rows: scores.len(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    std::fs::write(out.join("manifest.json"), json + "\n")?;
    std::fs::write(out.join("config.toml"), config.to_toml()?)?;

    Ok(ExperimentSummary {
        output_dir: out.clone(),
        manifest,
        parameters,
        scores,
    })
}

fn write_rows<T: Serialize>(path: &Path, hash: &str, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = create_csv(path, hash)?;
    for r in rows {
        w.serialize(r)?;
    }
    finish(w)
}

fn write_parameters(
    out: &Path,
    hash: &str,
    basins: &[PreparedBasin],
    outcomes: &[RunOutcome],
) -> Result<Vec<ParameterRecord>, ExperimentError> {
    let rows: Vec<ParameterRecord> = outcomes
        .iter()
        .map(|o| {
            let p = &o.calibration.params;
            ParameterRecord {
                basin_id: basins[o.basin].meta.basin_id.clone(),
                model: o.variant.name().into(),
                loss_kind: o.spec.kind().into(),
                level: o.spec.level(),
                x1: p.x1,
                x2: p.x2,
                x3: p.x3,
                x4: p.x4,
                x5: p.x5,
                x6: p.x6,
                score_calib: o.calibration.score,
                converged: o.calibration.converged,
                n_evals: o.calibration.n_evals,
            }
        })
        .collect();
    write_rows(&out.join("parameters.csv"), hash, &rows)?;
    Ok(rows)
}

fn period_slices(q_sim: &[f64], n_cal: usize) -> [(Period, &[f64]); 2] {
    [(Period::Calibration, &q_sim[..n_cal]), (Period::Validation, &q_sim[n_cal..])]
}

fn paired_scores(
    basins: &[PreparedBasin],
    outcomes: &[RunOutcome],
    periods: &PeriodSplit,
) -> Result<Vec<PairedScore>, ExperimentError> {
    let mut rows = Vec::new();
    for o in outcomes {
        let LossSpec::Quantile(a) = o.spec else { continue };
        let Some(se) = outcomes
            .iter()
            .find(|s| s.basin == o.basin && s.variant == o.variant && s.spec == LossSpec::SquaredError)
        else {
            continue;
        };
        let basin = &basins[o.basin];
        let ix = periods
            .indices(&basin.forcing)
            .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
        let n_cal = ix.validation - ix.calibration;
        let obs = [
            &basin.forcing.q_obs[ix.calibration..ix.validation],
            &basin.forcing.q_obs[ix.validation..ix.end],
        ];
        for ((period, own), ((_, other), obs)) in period_slices(&o.q_sim, n_cal)
            .into_iter()
            .zip(period_slices(&se.q_sim, n_cal).into_iter().zip(obs))
        {
            let score = |sim| {
                scoring::average_score(sim, obs, &o.spec)
                    .map(|(s, _)| s)
                    .map_err(|e| ExperimentError::Runtime(e.to_string()))
            };
            rows.push(PairedScore {
                basin_id: basin.meta.basin_id.clone(),
                model: o.variant.name().into(),
                level: a.value(),
                period,
                score_quantile_calibrated: score(own)?,
                score_squared_error_calibrated: score(other)?,
            });
        }
    }
    Ok(rows)
}

fn write_crossings(
    out: &Path,
    hash: &str,
    basins: &[PreparedBasin],
    outcomes: &[RunOutcome],
    config: &ExperimentConfig,
    periods: &PeriodSplit,
) -> Result<(), ExperimentError> {
    let mut rates = create_csv(&out.join("crossings.csv"), hash)?;
    let mut days = create_csv(&out.join("crossing_days.csv"), hash)?;
    days.write_record(["basin_id", "model", "level_low", "level_high", "date"])?;
    let mut wrote_header = false;
    for (b, basin) in basins.iter().enumerate() {
        let ix = periods
            .indices(&basin.forcing)
            .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
        let n_cal = ix.validation - ix.calibration;
        let dates = &basin.forcing.dates[ix.calibration..ix.end];
        for &variant in &config.variants {
            let runs: Vec<(f64, &RunOutcome)> = outcomes
                .iter()
                .filter(|o| o.basin == b && o.variant == variant)
                .filter_map(|o| o.spec.level().map(|a| (a, o)))
                .collect();
            for pair in runs.windows(2) {
                let ((a_low, low), (a_high, high)) = (pair[0], pair[1]);
                for ((period, l), (_, h)) in period_slices(&low.q_sim, n_cal)
                    .into_iter()
                    .zip(period_slices(&high.q_sim, n_cal))
                {
                    let c = scoring::crossing_rate(l, h, a_low, a_high)
                        .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
                    rates.serialize(CrossingRecord {
                        basin_id: basin.meta.basin_id.clone(),
                        model: variant.name().into(),
                        level_low: a_low,
                        level_high: a_high,
                        period,
                        crossing_rate: c.rate,
                        n_days: l.len(),
                    })?;
                    wrote_header = true;
                    let offset = if period == Period::Calibration { 0 } else { n_cal };
                    for d in c.days {
                        days.write_record(&[
                            basin.meta.basin_id.clone(),
                            variant.name().to_string(),
                            a_low.to_string(),
                            a_high.to_string(),
                            dates[offset + d].format("%Y-%m-%d").to_string(),
                        ])?;
                    }
                }
            }
        }
    }
    if !wrote_header {
        rates.write_record([
            "basin_id",
            "model",
            "level_low",
            "level_high",
            "period",
            "crossing_rate",
            "n_days",
        ])?;
    }
    finish(rates)?;
    finish(days)
}

fn write_simulations(
    out: &Path,
    hash: &str,
    basin: &PreparedBasin,
    runs: &[&RunOutcome],
    periods: &PeriodSplit,
) -> Result<(), ExperimentError> {
    let ix = periods
        .indices(&basin.forcing)
        .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
    let path = out.join("simulations").join(format!("{}.csv", basin.meta.basin_id));
    let mut w = create_csv(&path, hash)?;
    let mut header = vec!["date".to_string(), "period".to_string(), "q_obs".to_string()];
    header.extend(runs.iter().map(|r| column_name(r.variant, &r.spec)));
    w.write_record(&header)?;
    for (k, i) in (ix.calibration..ix.end).enumerate() {
        let period = if i < ix.validation {
            Period::Calibration
        } else {
            Period::Validation
        };
        let mut row = vec![
            basin.forcing.dates[i].format("%Y-%m-%d").to_string(),
            period.to_string(),
            fmt_opt(basin.forcing.q_obs[i]),
        ];
        row.extend(runs.iter().map(|r| r.q_sim[k].to_string()));
        w.write_record(&row)?;
    }
    finish(w)
}

/// One basin's simulation table as written by [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTable {
    pub dates: Vec<NaiveDate>,
    pub periods: Vec<Period>,
    pub q_obs: Vec<Option<f64>>,
    pub columns: Vec<String>,
    /// `values[c][day]`.
    pub values: Vec<Vec<f64>>,
}

impl SimulationTable {
    pub fn load(run_dir: &Path, basin_id: &str) -> Result<Self, ExperimentError> {
        let path = run_dir.join("simulations").join(format!("{basin_id}.csv"));
        if !path.exists() {
            return Err(ExperimentError::Selection(format!("no simulations for basin {basin_id}")));
        }
        let mut rdr = output::open_csv(&path)?;
        let header = rdr.headers()?.clone();
        if header.len() < 3 || &header[0] != "date" || &header[1] != "period" || &header[2] != "q_obs" {
            return Err(ExperimentError::Data(format!("{}: unexpected header", path.display())));
        }
        let columns: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
        let mut table = SimulationTable {
            dates: Vec::new(),
            periods: Vec::new(),
            q_obs: Vec::new(),
            values: vec![Vec::new(); columns.len()],
            columns,
        };
        let bad = |what: &str| ExperimentError::Data(format!("{}: bad {what}", path.display()));
        for rec in rdr.records() {
            let rec = rec?;
            table
                .dates
                .push(NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| bad("date"))?);
            table.periods.push(match &rec[1] {
                "calibration" => Period::Calibration,
                "validation" => Period::Validation,
                _ => return Err(bad("period")),
            });
            table.q_obs.push(output::parse_opt(&rec[2])?);
            for (c, col) in table.values.iter_mut().enumerate() {
                col.push(rec[3 + c].parse().map_err(|_| bad("value"))?);
            }
        }
        Ok(table)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c == name).map(|i| self.values[i].as_slice())
    }
}
