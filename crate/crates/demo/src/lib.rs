//! Browser bindings for the demo page in `www/`: the pinball loss of a sample,
//! GR unit hydrographs, and a GR4J model calibrated to a chosen quantile of a
//! noisy synthetic basin.

use qhydro::calibration::{calibrate, CalibOptions};
use qhydro::model::{simulate, uh_ordinates, ModelVariant, UnitHydrograph};
use qhydro::scoring::{self, EmpiricalDistribution, LossSpec};
use qhydro::synthetic::{Noise, SyntheticBasin, SyntheticConfig};
use wasm_bindgen::prelude::*;

/// Average pinball loss of the constant prediction `r` over `observations`,
/// evaluated at `n` evenly spaced `r` in `[r_min, r_max]`.
#[wasm_bindgen]
pub fn pinball_curve(level: f64, observations: Vec<f64>, r_min: f64, r_max: f64, n: usize) -> Result<Vec<f64>, String> {
    let spec = LossSpec::quantile(level).map_err(|e| e.to_string())?;
    if observations.is_empty() || n < 2 || r_max.partial_cmp(&r_min) != Some(std::cmp::Ordering::Greater) {
        return Err("need observations, n >= 2 and r_max > r_min".into());
    }
    let obs: Vec<Option<f64>> = observations.iter().copied().map(Some).collect();
    (0..n)
        .map(|i| {
            let r = r_min + (r_max - r_min) * i as f64 / (n - 1) as f64;
            scoring::average_score(&vec![r; obs.len()], &obs, &spec)
                .map(|(s, _)| s)
                .map_err(|e| e.to_string())
        })
        .collect()
}

/// Empirical `level`-quantile of the sample, which minimises [`pinball_curve`].
#[wasm_bindgen]
pub fn sample_quantile(level: f64, observations: Vec<f64>) -> Result<f64, String> {
    EmpiricalDistribution::new(observations)
        .and_then(|d| d.quantile(level))
        .map_err(|e| e.to_string())
}

/// Ordinates of UH1 (`which == 1`) or UH2 (`which == 2`) for time base `x4`.
#[wasm_bindgen]
pub fn unit_hydrograph(x4: f64, which: u8) -> Result<Vec<f64>, String> {
    let uh = match which {
        1 => UnitHydrograph::Uh1,
        2 => UnitHydrograph::Uh2,
        _ => return Err(format!("unknown unit hydrograph {which}")),
    };
    uh_ordinates(x4, uh).map_err(|e| e.to_string())
}

/// A synthetic basin whose observed flow is the true GR4J flow times
/// log-normal noise, and GR4J calibrations of it at chosen quantile levels.
#[wasm_bindgen]
pub struct QuantileDemo {
    basin: SyntheticBasin,
}

#[wasm_bindgen]
impl QuantileDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, sigma: f64, calibration_years: u32) -> Result<QuantileDemo, String> {
        if !(0.0..=2.0).contains(&sigma) {
            return Err("sigma must lie in [0, 2]".into());
        }
        let years = calibration_years.clamp(1, 20) as usize;
        let basin = SyntheticBasin::generate(&SyntheticConfig {
            seed: u64::from(seed),
            warmup_days: 365,
            calibration_days: 365 * years,
            validation_days: 365,
            noise: Noise::Multiplicative { sigma },
            ..Default::default()
        });
        Ok(QuantileDemo { basin })
    }

    fn validation_start(&self) -> usize {
        self.basin.forcing.len() - self.basin.split.validation.days() as usize
    }

    /// Observed validation-year flow, mm/day (`NaN` where missing).
    pub fn observed(&self) -> Vec<f64> {
        self.basin.forcing.q_obs[self.validation_start()..]
            .iter()
            .map(|q| q.unwrap_or(f64::NAN))
            .collect()
    }

    /// Noise-free validation-year flow, mm/day.
    pub fn truth(&self) -> Vec<f64> {
        self.basin.q_true[self.validation_start()..].to_vec()
    }

    /// Validation-year precipitation, mm/day.
    pub fn precipitation(&self) -> Vec<f64> {
        self.basin.forcing.precip[self.validation_start()..].to_vec()
    }

    /// Calibrates GR4J to the `level` quantile (or squared error when `level`
    /// is 0) and returns the validation-year simulation.
    pub fn calibrate(&self, level: f64) -> Result<Calibrated, String> {
        let spec = if level == 0.0 {
            LossSpec::SquaredError
        } else {
            LossSpec::quantile(level).map_err(|e| e.to_string())?
        };
        let options = CalibOptions {
            design_size: 3,
            stop_step: 0.01,
            ..Default::default()
        };
        let b = &self.basin;
        let cal = calibrate(ModelVariant::Gr4j, &b.forcing, &b.split, spec, &options).map_err(|e| e.to_string())?;
        let run = simulate(&cal.params, &b.forcing, &b.split).map_err(|e| e.to_string())?;
        let n_val = b.split.validation.days() as usize;
        let q_sim = run.q_sim[run.q_sim.len() - n_val..].to_vec();
        let obs = &b.forcing.q_obs[self.validation_start()..];
        let coverage = scoring::coverage(&q_sim, obs).map_err(|e| e.to_string())?;
        let (score, _) = scoring::average_score(&q_sim, obs, &spec).map_err(|e| e.to_string())?;
        Ok(Calibrated {
            params: cal.params.to_vec(),
            q_sim,
            coverage,
            score,
            n_evals: cal.n_evals as u32,
        })
    }
}

#[wasm_bindgen]
pub struct Calibrated {
    params: Vec<f64>,
    q_sim: Vec<f64>,
    coverage: f64,
    score: f64,
    n_evals: u32,
}

#[wasm_bindgen]
impl Calibrated {
    #[wasm_bindgen(getter)]
    pub fn params(&self) -> Vec<f64> {
        self.params.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn simulated(&self) -> Vec<f64> {
        self.q_sim.clone()
    }

    /// Share of validation observations below the simulation.
    #[wasm_bindgen(getter)]
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    /// Validation average score under the calibration loss.
    #[wasm_bindgen(getter)]
    pub fn score(&self) -> f64 {
        self.score
    }

    #[wasm_bindgen(getter)]
    pub fn evaluations(&self) -> u32 {
        self.n_evals
    }
}
