//! Quantile (pinball) loss, squared error, empirical quantiles and the summary
//! statistics used to compare calibrated models: relative scores, coverage and
//! quantile crossings.
//!
//! Observations are `Option<f64>`; `None` days are masked out pairwise before any
//! average is taken, so every model compared on one basin sees the same days.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, PartialEq)]
pub enum ScoreError {
    #[error("quantile level {0} outside (0, 1)")]
    Level(f64),
    #[error("non-finite value in score input")]
    NonFinite,
    #[error("series lengths differ ({0} vs {1})")]
    Length(usize, usize),
    #[error("no observed days left after masking")]
    Empty,
    #[error("benchmark score {0} is not positive")]
    DegenerateBenchmark(f64),
    #[error("levels out of order: {low} must be below {high}")]
    LevelOrder { low: f64, high: f64 },
    #[error("unknown loss kind '{0}'")]
    UnknownLoss(String),
}

/// A probability level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(a: f64) -> Result<Self, ScoreError> {
        if a > 0.0 && a < 1.0 {
            Ok(Self(a))
        } else {
            Err(ScoreError::Level(a))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = ScoreError;

    fn try_from(a: f64) -> Result<Self, Self::Error> {
        Self::new(a)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(a: QuantileLevel) -> f64 {
        a.0
    }
}

/// The seven levels of the large-sample experiment.
pub const STANDARD_LEVELS: [f64; 7] = [0.025, 0.050, 0.100, 0.500, 0.900, 0.950, 0.975];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    Quantile(QuantileLevel),
    SquaredError,
}

impl LossSpec {
    pub fn quantile(a: f64) -> Result<Self, ScoreError> {
        Ok(LossSpec::Quantile(QuantileLevel::new(a)?))
    }

    /// `quantile` or `squared_error`, as written in CSV outputs.
    pub fn kind(&self) -> &'static str {
        match self {
            LossSpec::Quantile(_) => "quantile",
            LossSpec::SquaredError => "squared_error",
        }
    }

    pub fn level(&self) -> Option<f64> {
        match self {
            LossSpec::Quantile(a) => Some(a.value()),
            LossSpec::SquaredError => None,
        }
    }

    /// Inverse of (`kind`, `level`).
    pub fn from_parts(kind: &str, level: Option<f64>) -> Result<Self, ScoreError> {
        match (kind, level) {
            ("quantile", Some(a)) => Self::quantile(a),
            ("squared_error", _) => Ok(LossSpec::SquaredError),
            _ => Err(ScoreError::UnknownLoss(kind.to_string())),
        }
    }

    /// Short label used for column names, e.g. `q0.025` or `se`.
    pub fn label(&self) -> String {
        match self {
            LossSpec::Quantile(a) => format!("q{}", a.value()),
            LossSpec::SquaredError => "se".to_string(),
        }
    }

    /// Per-day loss without argument checks.
    #[inline]
    pub fn loss(&self, prediction: f64, observation: f64) -> f64 {
        match self {
            LossSpec::Quantile(a) => pinball(prediction, observation, a.value()),
            LossSpec::SquaredError => {
                let d = prediction - observation;
                d * d
            }
        }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Quantile(a) => write!(f, "quantile({})", a.value()),
            LossSpec::SquaredError => f.write_str("squared_error"),
        }
    }
}

#[inline]
fn pinball(r: f64, x: f64, a: f64) -> f64 {
    let indicator = if x <= r { 1.0 } else { 0.0 };
    (r - x) * (indicator - a)
}

/// `L(r; x, a) = (r − x)(𝟙(x ≤ r) − a)`.
pub fn quantile_loss(r: f64, x: f64, a: f64) -> Result<f64, ScoreError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(ScoreError::Level(a));
    }
    if !r.is_finite() || !x.is_finite() {
        return Err(ScoreError::NonFinite);
    }
    Ok(pinball(r, x, a))
}

/// Mean of the per-day losses over days with an observation. Returns the mean
/// and the number of retained days.
pub fn average_score(sim: &[f64], obs: &[Option<f64>], spec: &LossSpec) -> Result<(f64, usize), ScoreError> {
    if sim.len() != obs.len() {
        return Err(ScoreError::Length(sim.len(), obs.len()));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (&r, x) in sim.iter().zip(obs) {
        let Some(x) = *x else { continue };
        if !r.is_finite() || !x.is_finite() {
            return Err(ScoreError::NonFinite);
        }
        total += spec.loss(r, x);
        n += 1;
    }
    if n == 0 {
        return Err(ScoreError::Empty);
    }
    Ok((total / n as f64, n))
}

/// A sorted sample standing in for a distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut sample: Vec<f64>) -> Result<Self, ScoreError> {
        if sample.is_empty() {
            return Err(ScoreError::Empty);
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::NonFinite);
        }
        sample.sort_by(f64::total_cmp);
        Ok(Self { sorted: sample })
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Right-continuous empirical CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.len() as f64
    }

    /// `inf{x : F̂(x) ≥ a}`, the ⌈a·n⌉-th order statistic.
    pub fn quantile(&self, a: f64) -> Result<f64, ScoreError> {
        if !(a > 0.0 && a < 1.0) {
            return Err(ScoreError::Level(a));
        }
        let n = self.len();
        // smallest k with k/n >= a, evaluated the same way the CDF is
        let mut k = ((a * n as f64).ceil() as usize).clamp(1, n);
        while k > 1 && (k - 1) as f64 / n as f64 >= a {
            k -= 1;
        }
        while (k as f64 / n as f64) < a && k < n {
            k += 1;
        }
        Ok(self.sorted[k - 1])
    }
}

pub fn empirical_quantile(dist: &EmpiricalDistribution, a: f64) -> Result<f64, ScoreError> {
    dist.quantile(a)
}

/// Constant prediction minimising the average pinball loss over `sample`, found
/// by exhaustive search over the sample points (the loss is piecewise linear
/// with kinks only there). Ties resolve to the smallest candidate. Returns the
/// minimiser and its average loss.
pub fn pinball_argmin_check(sample: &[f64], a: f64) -> Result<(f64, f64), ScoreError> {
    let dist = EmpiricalDistribution::new(sample.to_vec())?;
    QuantileLevel::new(a)?;
    let avg = |r: f64| sample.iter().map(|&x| pinball(r, x, a)).sum::<f64>() / sample.len() as f64;
    let mut best = (dist.sorted[0], avg(dist.sorted[0]));
    for &r in &dist.sorted[1..] {
        let loss = avg(r);
        if loss < best.1 {
            best = (r, loss);
        }
    }
    Ok(best)
}

/// `(bench − model) / bench`; positive means the model improves on the benchmark.
pub fn relative_score(bench: f64, model: f64) -> Result<f64, ScoreError> {
    if !bench.is_finite() || !model.is_finite() {
        return Err(ScoreError::NonFinite);
    }
    if bench <= 0.0 {
        return Err(ScoreError::DegenerateBenchmark(bench));
    }
    Ok((bench - model) / bench)
}

/// Fraction of observed days falling below the prediction; ties count one half.
pub fn coverage(sim: &[f64], obs: &[Option<f64>]) -> Result<f64, ScoreError> {
    if sim.len() != obs.len() {
        return Err(ScoreError::Length(sim.len(), obs.len()));
    }
    let mut hits = 0.0;
    let mut n = 0usize;
    for (&r, x) in sim.iter().zip(obs) {
        let Some(x) = *x else { continue };
        if x < r {
            hits += 1.0;
        } else if x == r {
            hits += 0.5;
        }
        n += 1;
    }
    if n == 0 {
        return Err(ScoreError::Empty);
    }
    Ok(hits / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crossings {
    pub rate: f64,
    /// Indices of days where the lower-level prediction exceeds the upper one.
    pub days: Vec<usize>,
}

/// Share of days on which a lower-level quantile prediction lies strictly above a
/// higher-level one.
pub fn crossing_rate(low: &[f64], high: &[f64], level_low: f64, level_high: f64) -> Result<Crossings, ScoreError> {
    if !(level_low < level_high) {
        return Err(ScoreError::LevelOrder {
            low: level_low,
            high: level_high,
        });
    }
    if low.len() != high.len() {
        return Err(ScoreError::Length(low.len(), high.len()));
    }
    if low.is_empty() {
        return Err(ScoreError::Empty);
    }
    let days: Vec<usize> = low
        .iter()
        .zip(high)
        .enumerate()
        .filter(|(_, (l, h))| l > h)
        .map(|(i, _)| i)
        .collect();
    Ok(Crossings {
        rate: days.len() as f64 / low.len() as f64,
        days,
    })
}

/// Median; even counts average the two middle values. `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Period label of a score row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Calibration,
    Validation,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Period::Calibration => "calibration",
            Period::Validation => "validation",
        })
    }
}

/// One row of the score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub basin_id: String,
    pub model: String,
    pub loss_kind: String,
    pub level: Option<f64>,
    pub period: Period,
    pub avg_score: f64,
    pub coverage: f64,
    pub n_days: usize,
}

impl ScoreRecord {
    pub fn loss_spec(&self) -> Result<LossSpec, ScoreError> {
        LossSpec::from_parts(&self.loss_kind, self.level)
    }
}
