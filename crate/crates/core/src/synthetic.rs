//! Synthetic basins: stochastic daily weather, Oudin PET, and "observed" flow
//! produced by a GR model with known parameters plus optional multiplicative
//! noise. Fully determined by the seed.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::model::{GrModel, ParameterSet};
use crate::pet::{extraterrestrial_radiation, oudin_pet, SolarContext};
use crate::timeseries::{
    mm_per_day_to_flow, write_basin_records, BasinMeta, DataError, DateRange, ForcingSeries, PeriodSplit,
    RawDailyRecord,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    None,
    /// `obs = truth · exp(sigma · z)`, `z ~ N(0, 1)`: spread proportional to flow.
    Multiplicative { sigma: f64 },
}

impl Noise {
    /// Factor applied to the noise-free flow at probability level `a`, given the
    /// standard normal quantile `z_a`.
    pub fn quantile_factor(&self, z_a: f64) -> f64 {
        match self {
            Noise::None => 1.0,
            Noise::Multiplicative { sigma } => (sigma * z_a).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub start: NaiveDate,
    pub warmup_days: usize,
    pub calibration_days: usize,
    pub validation_days: usize,
    pub latitude: f64,
    pub truth: ParameterSet,
    pub noise: Noise,
    /// Probability that a day's observation is missing.
    pub missing_fraction: f64,
    /// Mean wet-day rainfall, mm.
    pub wet_day_mean: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            start: NaiveDate::from_ymd_opt(1980, 1, 1).unwrap(),
            warmup_days: 731,
            calibration_days: 5844,
            validation_days: 5844,
            latitude: 42.0,
            truth: ParameterSet::gr4j(350.0, 0.0, 90.0, 1.7).unwrap(),
            noise: Noise::None,
            missing_fraction: 0.0,
            wet_day_mean: 9.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBasin {
    pub meta: BasinMeta,
    pub forcing: ForcingSeries,
    pub split: PeriodSplit,
    /// Noise-free model flow for every day, mm/day.
    pub q_true: Vec<f64>,
    pub tmin: Vec<f64>,
    pub tmax: Vec<f64>,
}

impl SyntheticBasin {
    pub fn generate(cfg: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.warmup_days + cfg.calibration_days + cfg.validation_days;
        let dates: Vec<NaiveDate> = cfg.start.iter_days().take(n).collect();

        let gamma_shape = 0.75;
        let amounts = Gamma::new(gamma_shape, cfg.wet_day_mean / gamma_shape).expect("valid gamma");
        let temp_noise = Normal::new(0.0, 2.5).expect("valid normal");
        let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
        let lat = cfg.latitude.to_radians();

        let mut wet = false;
        let mut precip = Vec::with_capacity(n);
        let mut pet = Vec::with_capacity(n);
        let mut tmin = Vec::with_capacity(n);
        let mut tmax = Vec::with_capacity(n);
        for d in &dates {
            let doy = d.ordinal();
            let season = (2.0 * std::f64::consts::PI * (f64::from(doy) - 105.0) / 365.0).sin();
            // wetter winters
            let p_wet = if wet { 0.62 } else { 0.28 } - 0.06 * season;
            wet = rng.random::<f64>() < p_wet;
            precip.push(if wet { amounts.sample(&mut rng) } else { 0.0 });

            let mean_t = 9.0 + 11.0 * season + temp_noise.sample(&mut rng);
            let half_range = 3.0 + 2.0 * rng.random::<f64>();
            tmin.push(mean_t - half_range);
            tmax.push(mean_t + half_range);
            let ctx = SolarContext::new(lat, doy).expect("valid solar context");
            pet.push(oudin_pet(mean_t, extraterrestrial_radiation(&ctx)).expect("valid PET inputs"));
        }

        let model = GrModel::new(cfg.truth).expect("valid truth parameters");
        let q_true = model.flows(&precip, &pet).expect("finite synthetic forcing");
        let q_obs = q_true
            .iter()
            .map(|&q| {
                let z: f64 = std_normal.sample(&mut rng);
                let missing = rng.random::<f64>() < cfg.missing_fraction;
                let value = match cfg.noise {
                    Noise::None => q,
                    Noise::Multiplicative { sigma } => q * (sigma * z).exp(),
                };
                (!missing).then_some(value)
            })
            .collect();

        let day = |k: usize| cfg.start + Duration::days(k as i64);
        let w = cfg.warmup_days;
        let c = cfg.calibration_days;
        let split = PeriodSplit::new(
            DateRange::new(day(0), day(w - 1)).expect("warm-up range"),
            DateRange::new(day(w), day(w + c - 1)).expect("calibration range"),
            DateRange::new(day(w + c), day(n - 1)).expect("validation range"),
        )
        .expect("synthetic split is consistent");

        Self {
            meta: BasinMeta::new(format!("syn{:04}", cfg.seed), cfg.latitude, 500.0).expect("valid meta"),
            forcing: ForcingSeries::new(dates, precip, pet, q_obs).expect("valid synthetic forcing"),
            split,
            q_true,
            tmin,
            tmax,
        }
    }

    /// Raw records in the input file layout, flow in ft³/s over `meta.area_km2`.
    pub fn to_records(&self) -> Vec<RawDailyRecord> {
        (0..self.forcing.len())
            .map(|i| RawDailyRecord {
                date: self.forcing.dates[i],
                precip: self.forcing.precip[i],
                tmin: self.tmin[i],
                tmax: self.tmax[i],
                flow: self.forcing.q_obs[i]
                    .map(|q| mm_per_day_to_flow(q, self.meta.area_km2).expect("positive area")),
            })
            .collect()
    }
}

/// Writes `<dir>/<basin_id>.csv` for each basin and a `<dir>/basins.csv`
/// metadata table, i.e. a data directory an experiment config can point at.
pub fn write_dataset(dir: &Path, basins: &[SyntheticBasin]) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let mut meta = csv::Writer::from_path(dir.join("basins.csv"))?;
    meta.write_record(["basin_id", "lat_deg", "area_km2"])?;
    for b in basins {
        let file = std::fs::File::create(dir.join(format!("{}.csv", b.meta.basin_id)))?;
        write_basin_records(&b.to_records(), std::io::BufWriter::new(file))?;
        meta.write_record(&[
            b.meta.basin_id.clone(),
            b.meta.latitude.to_string(),
            b.meta.area_km2.to_string(),
        ])?;
    }
    meta.flush()?;
    Ok(())
}
