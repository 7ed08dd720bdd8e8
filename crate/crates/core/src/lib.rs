//! Calibration of daily GR rainfall-runoff models against the quantile (pinball)
//! loss, so that each calibrated model simulates a chosen predictive quantile of
//! streamflow, together with the proper-score evaluation used to compare them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod experiment;
pub mod model;
pub mod pet;
pub mod scoring;
pub mod synthetic;
pub mod timeseries;

pub use calibration::{calibrate, CalibOptions, CalibrationResult};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentError};
pub use model::{simulate, GrModel, ModelState, ModelVariant, ParameterSet, SimulationRun};
pub use scoring::{LossSpec, QuantileLevel, ScoreRecord};
pub use timeseries::{BasinMeta, ForcingSeries, PeriodSplit};
