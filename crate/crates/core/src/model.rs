//! Daily GR4J / GR5J / GR6J rainfall-runoff simulation.
//!
//! All three share the GR4J production store. They differ in routing:
//!
//! * GR4J: 90 % of effective rainfall through UH1 (base `x4`) into a non-linear
//!   routing store, 10 % through UH2 (base `2·x4`) as direct flow; exchange
//!   `F = x2·(r/x3)^3.5`.
//! * GR5J: a single UH2-shaped hydrograph routes all effective rainfall, split
//!   90/10 after convolution; exchange `F = x2·(r/x3 − x5)`.
//! * GR6J: GR4J unit hydrographs, GR5J exchange, and the 90 % branch shared 60/40
//!   between the routing store and an exponential store drained by
//!   `x6·ln(1 + exp(expo/x6))`.
//!
//! Exchange is added to every branch. Branches clipped at zero record the exchange
//! that actually happened, which is what closes the water balance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{ForcingSeries, PeriodSplit};

/// Exponent of the unit-hydrograph S-curves.
const UH_EXPONENT: f64 = 2.5;
/// Fraction of effective rainfall routed through the slow branch.
const SLOW_FRACTION: f64 = 0.9;
/// GR6J share of the slow branch feeding the routing store.
const ROUTING_SHARE: f64 = 0.6;

#[derive(Error, Debug, PartialEq)]
pub enum ModelError {
    #[error("{variant} expects {expected} parameters, got {got}")]
    ParameterCount {
        variant: ModelVariant,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter {name} = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("non-finite or negative forcing on day {day}: precip {precip}, pet {pet}")]
    Forcing { day: usize, precip: f64, pet: f64 },
    #[error("non-finite internal flux on day {day}")]
    Numeric { day: usize },
    #[error("precipitation and PET lengths differ ({0} vs {1})")]
    Length(usize, usize),
    #[error("unknown model variant '{0}'")]
    UnknownVariant(String),
    #[error("forcing does not cover the requested periods: {0}")]
    Coverage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelVariant {
    #[serde(rename = "GR4J")]
    Gr4j,
    #[serde(rename = "GR5J")]
    Gr5j,
    #[serde(rename = "GR6J")]
    Gr6j,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [ModelVariant::Gr4j, ModelVariant::Gr5j, ModelVariant::Gr6j];

    pub fn n_params(self) -> usize {
        match self {
            ModelVariant::Gr4j => 4,
            ModelVariant::Gr5j => 5,
            ModelVariant::Gr6j => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Gr4j => "GR4J",
            ModelVariant::Gr5j => "GR5J",
            ModelVariant::Gr6j => "GR6J",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GR4J" => Ok(ModelVariant::Gr4j),
            "GR5J" => Ok(ModelVariant::Gr5j),
            "GR6J" => Ok(ModelVariant::Gr6j),
            _ => Err(ModelError::UnknownVariant(s.to_string())),
        }
    }
}

/// Model parameters. `x5` is only meaningful for GR5J/GR6J, `x6` for GR6J.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub variant: ModelVariant,
    /// Production store capacity, mm.
    pub x1: f64,
    /// Groundwater exchange coefficient, mm/day.
    pub x2: f64,
    /// Routing store capacity, mm.
    pub x3: f64,
    /// Unit hydrograph time base, days.
    pub x4: f64,
    /// Exchange threshold (dimensionless).
    pub x5: Option<f64>,
    /// Exponential store scale, mm.
    pub x6: Option<f64>,
}

impl ParameterSet {
    /// Builds a parameter set from the first `variant.n_params()` values.
    pub fn new(variant: ModelVariant, values: &[f64]) -> Result<Self, ModelError> {
        if values.len() != variant.n_params() {
            return Err(ModelError::ParameterCount {
                variant,
                expected: variant.n_params(),
                got: values.len(),
            });
        }
        let p = Self {
            variant,
            x1: values[0],
            x2: values[1],
            x3: values[2],
            x4: values[3],
            x5: values.get(4).copied(),
            x6: values.get(5).copied(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn gr4j(x1: f64, x2: f64, x3: f64, x4: f64) -> Result<Self, ModelError> {
        Self::new(ModelVariant::Gr4j, &[x1, x2, x3, x4])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let check = |name, value: f64, ok: bool, reason| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ModelError::Parameter { name, value, reason })
            }
        };
        check("x1", self.x1, self.x1 > 0.0, "must be > 0")?;
        check("x2", self.x2, true, "must be finite")?;
        check("x3", self.x3, self.x3 > 0.0, "must be > 0")?;
        check("x4", self.x4, self.x4 >= 0.5, "must be >= 0.5")?;
        if self.variant != ModelVariant::Gr4j {
            let x5 = self.x5.unwrap_or(f64::NAN);
            check("x5", x5, true, "required and finite")?;
        }
        if self.variant == ModelVariant::Gr6j {
            let x6 = self.x6.unwrap_or(f64::NAN);
            check("x6", x6, x6 > 0.0, "required and > 0")?;
        }
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.x1, self.x2, self.x3, self.x4];
        v.extend(self.x5.filter(|_| self.variant != ModelVariant::Gr4j));
        v.extend(self.x6.filter(|_| self.variant == ModelVariant::Gr6j));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitHydrograph {
    /// Time base `x4`.
    Uh1,
    /// Time base `2·x4`.
    Uh2,
}

fn s_curve(which: UnitHydrograph, t: f64, x4: f64) -> f64 {
    match which {
        UnitHydrograph::Uh1 => {
            if t <= 0.0 {
                0.0
            } else if t < x4 {
                (t / x4).powf(UH_EXPONENT)
            } else {
                1.0
            }
        }
        UnitHydrograph::Uh2 => {
            if t <= 0.0 {
                0.0
            } else if t <= x4 {
                0.5 * (t / x4).powf(UH_EXPONENT)
            } else if t < 2.0 * x4 {
                1.0 - 0.5 * (2.0 - t / x4).powf(UH_EXPONENT)
            } else {
                1.0
            }
        }
    }
}

/// Ordinates of a unit hydrograph: differences of its S-curve at whole days.
pub fn uh_ordinates(x4: f64, which: UnitHydrograph) -> Result<Vec<f64>, ModelError> {
    if !(x4 >= 0.5) || !x4.is_finite() {
        return Err(ModelError::Parameter {
            name: "x4",
            value: x4,
            reason: "must be >= 0.5",
        });
    }
    let base = match which {
        UnitHydrograph::Uh1 => x4,
        UnitHydrograph::Uh2 => 2.0 * x4,
    };
    let len = base.ceil() as usize;
    Ok((1..=len)
        .map(|j| s_curve(which, j as f64, x4) - s_curve(which, j as f64 - 1.0, x4))
        .collect())
}

/// Store levels and pending unit-hydrograph output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Production store, mm.
    pub production: f64,
    /// Routing store, mm.
    pub routing: f64,
    /// GR6J exponential store, mm (may be negative).
    pub exponential: f64,
    /// `uh1[k]`: depth released `k` days from now. Empty for GR5J.
    pub uh1: Vec<f64>,
    pub uh2: Vec<f64>,
}

impl ModelState {
    /// Water held in stores and unit-hydrograph buffers.
    pub fn storage(&self) -> f64 {
        self.production
            + self.routing
            + self.exponential
            + self.uh1.iter().sum::<f64>()
            + self.uh2.iter().sum::<f64>()
    }
}

pub fn init_state(params: &ParameterSet) -> ModelState {
    let (n1, n2) = buffer_lengths(params);
    ModelState {
        production: 0.3 * params.x1,
        routing: 0.5 * params.x3,
        exponential: 0.0,
        uh1: vec![0.0; n1],
        uh2: vec![0.0; n2],
    }
}

fn buffer_lengths(params: &ParameterSet) -> (usize, usize) {
    let n1 = params.x4.ceil() as usize;
    let n2 = (2.0 * params.x4).ceil() as usize;
    match params.variant {
        ModelVariant::Gr5j => (0, n2),
        _ => (n1, n2),
    }
}

/// Fluxes of one simulated day, mm.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DayFluxes {
    pub q: f64,
    pub actual_et: f64,
    pub production_gain: f64,
    pub soil_evaporation: f64,
    pub percolation: f64,
    /// Groundwater exchange after clipping, signed (positive = import).
    pub exchange: f64,
    pub routed: f64,
    pub direct: f64,
    pub exponential: f64,
}

/// Sums over a simulated span, mm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WaterBalance {
    pub precip: f64,
    pub actual_et: f64,
    pub exchange: f64,
    pub storage_start: f64,
    pub storage_end: f64,
    pub discharge: f64,
    pub days: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    /// Simulated flow for the reported days (warm-up removed when produced by [`simulate`]).
    pub q_sim: Vec<f64>,
    /// Number of leading simulated days not included in `q_sim`.
    pub skipped: usize,
    pub final_state: ModelState,
    /// Accumulated over every simulated day, warm-up included.
    pub balance: WaterBalance,
}

/// Precomputed simulator for one parameter set.
#[derive(Debug, Clone)]
pub struct GrModel {
    params: ParameterSet,
    ord1: Vec<f64>,
    ord2: Vec<f64>,
}

fn push_through(buffer: &mut [f64], ordinates: &[f64], input: f64) -> f64 {
    for (b, o) in buffer.iter_mut().zip(ordinates) {
        *b += o * input;
    }
    let out = buffer[0];
    buffer.rotate_left(1);
    if let Some(last) = buffer.last_mut() {
        *last = 0.0;
    }
    out
}

/// `x·ln(1 + exp(v/x))` without overflow.
fn softplus_scaled(v: f64, scale: f64) -> f64 {
    let a = v / scale;
    scale * (a.max(0.0) + (-a.abs()).exp().ln_1p())
}

impl GrModel {
    pub fn new(params: ParameterSet) -> Result<Self, ModelError> {
        params.validate()?;
        let ord2 = uh_ordinates(params.x4, UnitHydrograph::Uh2)?;
        let ord1 = match params.variant {
            ModelVariant::Gr5j => Vec::new(),
            _ => uh_ordinates(params.x4, UnitHydrograph::Uh1)?,
        };
        Ok(Self { params, ord1, ord2 })
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn init_state(&self) -> ModelState {
        init_state(&self.params)
    }

    /// Advances `state` by one day. `day` only labels errors.
    pub fn step(&self, state: &mut ModelState, precip: f64, pet: f64, day: usize) -> Result<DayFluxes, ModelError> {
        if !(precip >= 0.0 && pet >= 0.0) || !precip.is_finite() || !pet.is_finite() {
            return Err(ModelError::Forcing { day, precip, pet });
        }
        let p = &self.params;
        let x1 = p.x1;
        let mut fx = DayFluxes::default();

        // interception and production store
        let (net_rain, net_pet) = if precip >= pet {
            (precip - pet, 0.0)
        } else {
            (0.0, pet - precip)
        };
        let s = state.production;
        if net_rain > 0.0 {
            let ratio = s / x1;
            let th = (net_rain / x1).tanh();
            fx.production_gain = x1 * (1.0 - ratio * ratio) * th / (1.0 + ratio * th);
        }
        if net_pet > 0.0 {
            let ratio = s / x1;
            let th = (net_pet / x1).tanh();
            fx.soil_evaporation = s * (2.0 - ratio) * th / (1.0 + (1.0 - ratio) * th);
        }
        fx.actual_et = precip.min(pet) + fx.soil_evaporation;
        let s = s + fx.production_gain - fx.soil_evaporation;
        let ratio = s / x1 * (4.0 / 9.0);
        fx.percolation = s * (1.0 - (1.0 + ratio.powi(4)).powf(-0.25));
        state.production = s - fx.percolation;
        let effective = fx.percolation + (net_rain - fx.production_gain);

        // unit hydrographs
        let (slow, fast) = match p.variant {
            ModelVariant::Gr5j => {
                let out = push_through(&mut state.uh2, &self.ord2, effective);
                (SLOW_FRACTION * out, (1.0 - SLOW_FRACTION) * out)
            }
            _ => (
                push_through(&mut state.uh1, &self.ord1, SLOW_FRACTION * effective),
                push_through(&mut state.uh2, &self.ord2, (1.0 - SLOW_FRACTION) * effective),
            ),
        };

        let r = state.routing;
        let exchange = match p.variant {
            ModelVariant::Gr4j => p.x2 * (r / p.x3).powf(3.5),
            _ => p.x2 * (r / p.x3 - p.x5.unwrap_or(0.0)),
        };

        let to_routing = match p.variant {
            ModelVariant::Gr6j => ROUTING_SHARE * slow,
            _ => slow,
        };
        let r_sum = r + to_routing + exchange;
        let (r_filled, routed_exchange) = if r_sum >= 0.0 {
            (r_sum, exchange)
        } else {
            (0.0, -(r + to_routing))
        };
        fx.routed = r_filled * (1.0 - (1.0 + (r_filled / p.x3).powi(4)).powf(-0.25));
        state.routing = r_filled - fx.routed;

        let (direct, direct_exchange) = if fast + exchange >= 0.0 {
            (fast + exchange, exchange)
        } else {
            (0.0, -fast)
        };
        fx.direct = direct;

        let mut expo_exchange = 0.0;
        if p.variant == ModelVariant::Gr6j {
            let scale = p.x6.unwrap_or(1.0);
            let filled = state.exponential + (1.0 - ROUTING_SHARE) * slow + exchange;
            fx.exponential = softplus_scaled(filled, scale);
            state.exponential = filled - fx.exponential;
            expo_exchange = exchange;
        }

        fx.exchange = routed_exchange + direct_exchange + expo_exchange;
        fx.q = fx.routed + fx.direct + fx.exponential;
        if !(fx.q.is_finite() && state.production.is_finite() && state.routing.is_finite() && state.exponential.is_finite()) {
            return Err(ModelError::Numeric { day });
        }
        Ok(fx)
    }

    /// Runs from the initial state over the whole forcing, dropping the first
    /// `skip` days from the reported flow.
    pub fn run(&self, precip: &[f64], pet: &[f64], skip: usize) -> Result<SimulationRun, ModelError> {
        if precip.len() != pet.len() {
            return Err(ModelError::Length(precip.len(), pet.len()));
        }
        let mut state = self.init_state();
        let mut balance = WaterBalance {
            storage_start: state.storage(),
            days: precip.len(),
            ..Default::default()
        };
        let mut q_sim = Vec::with_capacity(precip.len().saturating_sub(skip));
        for (day, (&p, &e)) in precip.iter().zip(pet).enumerate() {
            let fx = self.step(&mut state, p, e, day)?;
            balance.precip += p;
            balance.actual_et += fx.actual_et;
            balance.exchange += fx.exchange;
            balance.discharge += fx.q;
            if day >= skip {
                q_sim.push(fx.q);
            }
        }
        balance.storage_end = state.storage();
        Ok(SimulationRun {
            q_sim,
            skipped: skip.min(precip.len()),
            final_state: state,
            balance,
        })
    }

    /// Runs only the daily flow, without balance bookkeeping.
    pub fn flows(&self, precip: &[f64], pet: &[f64]) -> Result<Vec<f64>, ModelError> {
        if precip.len() != pet.len() {
            return Err(ModelError::Length(precip.len(), pet.len()));
        }
        let mut state = self.init_state();
        precip
            .iter()
            .zip(pet)
            .enumerate()
            .map(|(day, (&p, &e))| self.step(&mut state, p, e, day).map(|f| f.q))
            .collect()
    }
}

/// One-day transition from an explicit state.
pub fn step(params: &ParameterSet, state: &ModelState, precip: f64, pet: f64) -> Result<(ModelState, DayFluxes), ModelError> {
    let model = GrModel::new(*params)?;
    let mut next = state.clone();
    let (n1, n2) = buffer_lengths(params);
    next.uh1.resize(n1, 0.0);
    next.uh2.resize(n2, 0.0);
    let fx = model.step(&mut next, precip, pet, 0)?;
    Ok((next, fx))
}

/// Simulates warm-up, calibration and validation; `q_sim` holds calibration and
/// validation days only.
pub fn simulate(params: &ParameterSet, forcing: &ForcingSeries, periods: &PeriodSplit) -> Result<SimulationRun, ModelError> {
    let ix = periods
        .indices(forcing)
        .map_err(|e| ModelError::Coverage(e.to_string()))?;
    let model = GrModel::new(*params)?;
    model.run(
        &forcing.precip[ix.warmup..ix.end],
        &forcing.pet[ix.warmup..ix.end],
        ix.calibration - ix.warmup,
    )
}

/// Signed closure error of the water balance, mm:
/// `P − AET − Q − ΔS + exchange`.
pub fn mass_balance(run: &SimulationRun) -> f64 {
    let b = &run.balance;
    b.precip - b.actual_et - b.discharge - (b.storage_end - b.storage_start) + b.exchange
}
