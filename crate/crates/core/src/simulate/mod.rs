//! Simulation studies: coverage of the two calibration procedures under
//! confounded treatment assignment, and the operating characteristics of
//! Gamma-value sensitivity analysis.
//!
//! Replicate `r` draws from stream `r` of the configured seed, and results
//! are collected in replicate order, so reports do not depend on the
//! number of threads.

mod coverage;
pub mod dgp;
mod study;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::{BoundPair, LogisticPropensity};
use crate::pac::EnvelopeMethod;
use crate::quantile::inf_quantile_sorted;

pub use coverage::{
    run_coverage_experiment, CoverageRecord, CoverageReport, CoverageSummary, GapRecord,
    GapSummary, SimConfig,
};
pub use dgp::{Dgp, Effect, Unit};
pub use study::{
    run_sensitivity_experiment, SensitivityConfig, SensitivityRecord, SensitivityReport,
    SensitivitySummary,
};

/// Where the likelihood-ratio bounds come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsSource {
    /// True propensity and treated fraction.
    Oracle,
    /// Logistic fit and empirical treated fraction on the training fold.
    Estimated,
}

impl std::str::FromStr for BoundsSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "estimated" => Ok(Self::Estimated),
            other => Err(Error::InvalidArgument(format!(
                "unknown bounds source '{other}'"
            ))),
        }
    }
}

/// A calibration procedure as named in reports: `alg1`, `alg2:plugin`,
/// `alg2:hoeffding` or `alg2:wsr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ProcedureSpec {
    Alg1,
    Alg2(EnvelopeMethod),
}

impl std::fmt::Display for ProcedureSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Alg1 => f.write_str("alg1"),
            Self::Alg2(m) => write!(f, "alg2:{m}"),
        }
    }
}

impl std::str::FromStr for ProcedureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(Self::Alg1),
            _ => match s.strip_prefix("alg2:") {
                Some(m) => Ok(Self::Alg2(m.parse()?)),
                None => Err(Error::InvalidArgument(format!("unknown procedure '{s}'"))),
            },
        }
    }
}

impl From<ProcedureSpec> for String {
    fn from(p: ProcedureSpec) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for ProcedureSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Propensity model, treated fraction and bound `M` on the upper bound.
struct Nuisance {
    propensity: LogisticPropensity,
    p1: f64,
}

impl Nuisance {
    /// Supremum of the upper bound over the unit cube.
    fn sup_upper(&self, bounds: &BoundPair) -> f64 {
        let (lo, hi) = self.propensity.range_over_box(0.0, 1.0);
        bounds.sup_upper(lo, hi)
    }

    fn propensity_range(&self) -> (f64, f64) {
        self.propensity.range_over_box(0.0, 1.0)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Inf-quantile at level `q` of the values.
fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    inf_quantile_sorted(&sorted, q)
}

fn check_level(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidLevel(format!(
            "{name} must lie in (0, 1), got {v}"
        )));
    }
    Ok(())
}

fn check_count(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
    }
    Ok(())
}
