//! Parameter estimation in transformed space: a full-factorial screening lattice
//! followed by a compass (coordinate pattern) search from the best lattice point.
//!
//! Transforms: `ln` for the capacities and the time base (x1, x3, x4, x6),
//! `asinh` for the signed exchange coefficient (x2), identity for x5. Candidate
//! points are always clamped to the transformed bound box, so every evaluated
//! parameter set lies inside the physical bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GrModel, ModelError, ModelVariant, ParameterSet};
use crate::scoring::LossSpec;
use crate::timeseries::{ForcingSeries, PeriodSplit};

#[derive(Error, Debug)]
pub enum CalibrationError {
    #[error("invalid calibration options: {0}")]
    Options(String),
    #[error("every screening candidate failed to produce a finite score")]
    ScreeningFailed,
    #[error("no observed days in the calibration period")]
    NoObservations,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Log,
    Asinh,
    Identity,
}

impl Transform {
    fn forward(self, v: f64) -> f64 {
        match self {
            Transform::Log => v.ln(),
            Transform::Asinh => v.asinh(),
            Transform::Identity => v,
        }
    }

    fn inverse(self, t: f64) -> f64 {
        match self {
            Transform::Log => t.exp(),
            Transform::Asinh => t.sinh(),
            Transform::Identity => t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBound {
    pub name: &'static str,
    pub lower: f64,
    pub upper: f64,
    pub transform: Transform,
}

const BOUNDS: [ParamBound; 6] = [
    ParamBound { name: "x1", lower: 1e-2, upper: 3000.0, transform: Transform::Log },
    ParamBound { name: "x2", lower: -10.0, upper: 10.0, transform: Transform::Asinh },
    ParamBound { name: "x3", lower: 1e-2, upper: 1000.0, transform: Transform::Log },
    ParamBound { name: "x4", lower: 0.5, upper: 10.0, transform: Transform::Log },
    ParamBound { name: "x5", lower: -4.0, upper: 4.0, transform: Transform::Identity },
    ParamBound { name: "x6", lower: 1e-2, upper: 100.0, transform: Transform::Log },
];

pub fn parameter_bounds(variant: ModelVariant) -> &'static [ParamBound] {
    &BOUNDS[..variant.n_params()]
}

/// Bijection between a variant's parameter box and its transformed box.
#[derive(Debug, Clone)]
pub struct ParamTransform {
    variant: ModelVariant,
    bounds: &'static [ParamBound],
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamTransform {
    pub fn new(variant: ModelVariant) -> Self {
        let bounds = parameter_bounds(variant);
        Self {
            variant,
            bounds,
            lower: bounds.iter().map(|b| b.transform.forward(b.lower)).collect(),
            upper: bounds.iter().map(|b| b.transform.forward(b.upper)).collect(),
        }
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, params: &ParameterSet) -> bool {
        params
            .to_vec()
            .iter()
            .zip(self.bounds)
            .all(|(v, b)| (b.lower..=b.upper).contains(v))
    }

    pub fn to_transformed(&self, params: &ParameterSet) -> Vec<f64> {
        params
            .to_vec()
            .iter()
            .zip(self.bounds)
            .map(|(v, b)| b.transform.forward(*v))
            .collect()
    }

    /// Maps back to physical units, clamping into the box first.
    pub fn from_transformed(&self, t: &[f64]) -> Result<ParameterSet, ModelError> {
        let values: Vec<f64> = t
            .iter()
            .zip(self.bounds.iter().zip(self.lower.iter().zip(&self.upper)))
            .map(|(v, (b, (lo, hi)))| b.transform.inverse(v.clamp(*lo, *hi)).clamp(b.lower, b.upper))
            .collect();
        ParameterSet::new(self.variant, &values)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| l + 0.5 * (u - l)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibOptions {
    /// Lattice points per transformed axis in the screening phase.
    pub design_size: usize,
    /// Initial compass step, transformed units.
    pub initial_step: f64,
    pub shrink: f64,
    pub stop_step: f64,
    pub max_iterations: usize,
    /// Recorded with results; the search itself is fully deterministic.
    pub seed: u64,
}

impl Default for CalibOptions {
    fn default() -> Self {
        Self {
            design_size: 5,
            initial_step: 0.64,
            shrink: 0.5,
            stop_step: 1e-3,
            max_iterations: 200,
            seed: 0,
        }
    }
}

impl CalibOptions {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let fail = |m: &str| Err(CalibrationError::Options(m.to_string()));
        if self.design_size == 0 {
            return fail("design_size must be positive");
        }
        if !(self.initial_step > 0.0) || !(self.stop_step > 0.0) {
            return fail("steps must be positive");
        }
        if self.stop_step >= self.initial_step {
            return fail("stop_step must be smaller than initial_step");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return fail("shrink must lie in (0, 1)");
        }
        if self.max_iterations == 0 {
            return fail("max_iterations must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: ParameterSet,
    /// Average calibration-period loss at `params`.
    pub score: f64,
    pub screened_score: f64,
    pub n_evals: usize,
    /// Best score after each outer iteration (iteration 0 is the start point).
    pub trace: Vec<(usize, f64)>,
    pub converged: bool,
}

/// Calibration-period loss for one variant and loss spec. Holds borrowed slices
/// covering warm-up plus calibration.
#[derive(Debug, Clone)]
pub struct CalibrationProblem<'a> {
    variant: ModelVariant,
    precip: &'a [f64],
    pet: &'a [f64],
    warmup_len: usize,
    obs: &'a [Option<f64>],
    spec: LossSpec,
    transform: ParamTransform,
}

impl<'a> CalibrationProblem<'a> {
    pub fn new(
        variant: ModelVariant,
        forcing: &'a ForcingSeries,
        periods: &PeriodSplit,
        spec: LossSpec,
    ) -> Result<Self, CalibrationError> {
        let ix = periods
            .indices(forcing)
            .map_err(|e| ModelError::Coverage(e.to_string()))?;
        let obs = &forcing.q_obs[ix.calibration..ix.validation];
        if obs.iter().all(Option::is_none) {
            return Err(CalibrationError::NoObservations);
        }
        Ok(Self {
            variant,
            precip: &forcing.precip[ix.warmup..ix.validation],
            pet: &forcing.pet[ix.warmup..ix.validation],
            warmup_len: ix.calibration - ix.warmup,
            obs,
            spec,
            transform: ParamTransform::new(variant),
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn spec(&self) -> LossSpec {
        self.spec
    }

    pub fn transform(&self) -> &ParamTransform {
        &self.transform
    }

    /// Average loss, or `+∞` when the simulation fails.
    pub fn evaluate(&self, params: &ParameterSet) -> f64 {
        match self.try_evaluate(params) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => {
                log::debug!("{}: non-finite objective at {:?}", self.variant, params.to_vec());
                f64::INFINITY
            }
            Err(e) => {
                log::warn!("{}: simulation failed at {:?}: {e}", self.variant, params.to_vec());
                f64::INFINITY
            }
        }
    }

    fn try_evaluate(&self, params: &ParameterSet) -> Result<f64, ModelError> {
        let model = GrModel::new(*params)?;
        let mut state = model.init_state();
        let mut total = 0.0;
        let mut n = 0usize;
        for (day, (&p, &e)) in self.precip.iter().zip(self.pet).enumerate() {
            let q = model.step(&mut state, p, e, day)?.q;
            if day >= self.warmup_len {
                if let Some(x) = self.obs[day - self.warmup_len] {
                    total += self.spec.loss(q, x);
                    n += 1;
                }
            }
        }
        Ok(total / n as f64)
    }

    pub fn evaluate_transformed(&self, t: &[f64]) -> f64 {
        match self.transform.from_transformed(t) {
            Ok(p) => self.evaluate(&p),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Average calibration-period score of `params`, `+∞` if the run fails.
pub fn objective(
    params: &ParameterSet,
    forcing: &ForcingSeries,
    periods: &PeriodSplit,
    spec: LossSpec,
) -> Result<f64, CalibrationError> {
    Ok(CalibrationProblem::new(params.variant, forcing, periods, spec)?.evaluate(params))
}

/// Lattice point `index` (mixed radix, first axis most significant) at cell
/// midpoints of the transformed box.
fn lattice_point(index: usize, n: usize, lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let d = lower.len();
    let mut digits = vec![0usize; d];
    let mut rest = index;
    for slot in digits.iter_mut().rev() {
        *slot = rest % n;
        rest /= n;
    }
    digits
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&k, (lo, hi))| lo + (k as f64 + 0.5) / n as f64 * (hi - lo))
        .collect()
}

/// Transformed coordinates of every screening candidate, in evaluation order.
pub fn screening_lattice(transform: &ParamTransform, design_size: usize) -> Vec<Vec<f64>> {
    let count = design_size.pow(transform.dim() as u32);
    (0..count)
        .map(|i| lattice_point(i, design_size, transform.lower(), transform.upper()))
        .collect()
}

#[cfg(feature = "parallel")]
fn evaluate_all(problem: &CalibrationProblem<'_>, points: &[Vec<f64>]) -> Vec<f64> {
    use rayon::prelude::*;
    points.par_iter().map(|t| problem.evaluate_transformed(t)).collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_all(problem: &CalibrationProblem<'_>, points: &[Vec<f64>]) -> Vec<f64> {
    points.iter().map(|t| problem.evaluate_transformed(t)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Screened {
    pub params: ParameterSet,
    pub score: f64,
    pub n_evals: usize,
}

/// Evaluates the full lattice and returns its best point; ties go to the
/// earliest lattice index.
pub fn screen(problem: &CalibrationProblem<'_>, options: &CalibOptions) -> Result<Screened, CalibrationError> {
    options.validate()?;
    let points = screening_lattice(problem.transform(), options.design_size);
    let scores = evaluate_all(problem, &points);
    let best = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_finite())
        .fold(None::<(usize, f64)>, |acc, (i, &s)| match acc {
            Some((_, b)) if b <= s => acc,
            _ => Some((i, s)),
        });
    let (i, score) = best.ok_or(CalibrationError::ScreeningFailed)?;
    Ok(Screened {
        params: problem.transform().from_transformed(&points[i])?,
        score,
        n_evals: points.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub point: Vec<f64>,
    pub score: f64,
    pub n_evals: usize,
    pub trace: Vec<(usize, f64)>,
    pub converged: bool,
}

/// Compass search on a box. Each outer iteration probes `±step` along every
/// axis (axis order, negative side first) and moves to the best strict
/// improvement; without one the step shrinks. Stops once the step falls below
/// `stop_step` (`converged`) or after `max_iterations`.
pub fn compass_search<F>(start: &[f64], lower: &[f64], upper: &[f64], mut objective: F, options: &CalibOptions) -> SearchOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let clamp = |v: f64, k: usize| v.clamp(lower[k], upper[k]);
    let mut x: Vec<f64> = start.iter().enumerate().map(|(k, v)| clamp(*v, k)).collect();
    let sanitize = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let mut fx = sanitize(objective(&x));
    let mut n_evals = 1;
    let mut step = options.initial_step;
    let mut trace = vec![(0, fx)];
    let mut converged = false;

    for iteration in 1..=options.max_iterations {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for axis in 0..x.len() {
            for dir in [-1.0, 1.0] {
                let moved = clamp(x[axis] + dir * step, axis);
                if moved == x[axis] {
                    continue;
                }
                let mut y = x.clone();
                y[axis] = moved;
                let fy = sanitize(objective(&y));
                n_evals += 1;
                let threshold = best.as_ref().map_or(fx, |b| b.1);
                if fy < threshold {
                    best = Some((y, fy));
                }
            }
        }
        match best {
            Some((y, fy)) => {
                x = y;
                fx = fy;
            }
            None => step *= options.shrink,
        }
        trace.push((iteration, fx));
        if step < options.stop_step {
            converged = true;
            break;
        }
    }
    SearchOutcome {
        point: x,
        score: fx,
        n_evals,
        trace,
        converged,
    }
}

pub fn local_search(
    problem: &CalibrationProblem<'_>,
    start: &ParameterSet,
    options: &CalibOptions,
) -> Result<CalibrationResult, CalibrationError> {
    options.validate()?;
    let tf = problem.transform();
    let outcome = compass_search(
        &tf.to_transformed(start),
        tf.lower(),
        tf.upper(),
        |t| problem.evaluate_transformed(t),
        options,
    );
    Ok(CalibrationResult {
        params: tf.from_transformed(&outcome.point)?,
        score: outcome.score,
        screened_score: outcome.trace[0].1,
        n_evals: outcome.n_evals,
        trace: outcome.trace,
        converged: outcome.converged,
    })
}

/// Screening followed by compass search from the screened optimum.
pub fn calibrate_problem(problem: &CalibrationProblem<'_>, options: &CalibOptions) -> Result<CalibrationResult, CalibrationError> {
    let screened = screen(problem, options)?;
    let mut result = local_search(problem, &screened.params, options)?;
    result.screened_score = screened.score;
    result.n_evals += screened.n_evals;
    Ok(result)
}

pub fn calibrate(
    variant: ModelVariant,
    forcing: &ForcingSeries,
    periods: &PeriodSplit,
    spec: LossSpec,
    options: &CalibOptions,
) -> Result<CalibrationResult, CalibrationError> {
    let problem = CalibrationProblem::new(variant, forcing, periods, spec)?;
    calibrate_problem(&problem, options)
}
