//! Robust conformal prediction under bounded likelihood-ratio shift.
//!
//! Calibration scores are reweighted by an unknown likelihood ratio known
//! only to lie between per-unit bounds `l(x) <= w(x) <= u(x)`. The crate
//! provides marginally valid and PAC-valid thresholds under such bounds,
//! worst-case coverage computations, the sensitivity-model bounds used for
//! counterfactual and individual treatment effect inference, Gamma-value
//! sensitivity analysis, and the simulation studies that exercise them.

// NaN-rejecting range checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod marginal;
pub mod nuisance;
pub mod pac;
pub mod predictor;
pub mod quantile;
pub mod rng;
pub mod scores;
pub mod sensitivity;
pub mod set;
pub mod simulate;
pub mod worstcase;

pub use data::{split, Dataset, Level, Sample, SplitSpec};
pub use error::{Error, Result};
pub use marginal::{
    robust_threshold, weighted_conformal_threshold, CalibrationSet, RobustQuantile,
};
pub use nuisance::{
    bound_functions, fit_propensity, BoundPair, Counterfactual, LogisticPropensity, Population,
    Propensity, TargetSpec,
};
pub use pac::{pac_threshold, EnvelopeEstimate, EnvelopeMethod, PacConfig};
pub use predictor::{CounterfactualPredictor, FittedThreshold, Procedure};
pub use scores::{fit_quantile_model, QuantileModel, ScoreFn};
pub use sensitivity::{GammaCurve, GammaGrid, GammaValue, NullSet};
pub use set::{Interval, PredictionSet, ScoreKind};
