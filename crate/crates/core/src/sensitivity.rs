//! Sensitivity analysis for individual treatment effects.
//!
//! For a test unit, the hypotheses `H0(gamma)`: "the ITE lies in `C` and
//! the confounding level is at most `gamma`" are nested in `gamma`. Each is
//! rejected when the ITE prediction interval built at `gamma` misses `C`.
//! Because the intervals grow with `gamma`, the rejected levels form a
//! prefix `[1, G)` of the grid, and the Gamma-value `G` summarises the
//! strength of evidence against `C`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::FittedThreshold;
use crate::set::Interval;

/// Slack allowed when checking that intervals grow with `gamma`.
pub const NESTING_TOL: f64 = 1e-9;

/// Increasing confounding levels starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    values: Vec<f64>,
}

impl GammaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.first() != Some(&1.0) {
            return Err(Error::InvalidArgument("gamma grid must start at 1".into()));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) || !values.iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidArgument(
                "gamma grid must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `1, 1 + step, ...` up to `max` (inclusive, up to rounding).
    pub fn regular(step: f64, max: f64) -> Result<Self> {
        if !(step > 0.0) || !(max >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "bad grid step {step} or maximum {max}"
            )));
        }
        let count = ((max - 1.0) / step + 1e-9).floor() as usize;
        Self::new(
            (0..=count)
                .map(|i| round12(1.0 + i as f64 * step))
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

impl Default for GammaGrid {
    /// `{1, 1.05, ..., 5} ∪ {6, 7, ..., 25}`.
    fn default() -> Self {
        let mut values: Vec<f64> = (0..=80).map(|i| round12(1.0 + 0.05 * i as f64)).collect();
        values.extend((6..=25).map(f64::from));
        Self { values }
    }
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// The set `C` of ITE values under the null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape", content = "value")]
pub enum NullSet {
    Point(f64),
    /// `(-inf, a]`
    AtMost(f64),
    /// `[a, inf)`
    AtLeast(f64),
}

impl NullSet {
    pub fn contains(&self, ite: f64) -> bool {
        match *self {
            NullSet::Point(a) => ite == a,
            NullSet::AtMost(a) => ite <= a,
            NullSet::AtLeast(a) => ite >= a,
        }
    }

    pub fn intersects(&self, iv: &Interval) -> bool {
        if iv.is_empty() {
            return false;
        }
        match *self {
            NullSet::Point(a) => iv.contains(a),
            NullSet::AtMost(a) => iv.lo <= a,
            NullSet::AtLeast(a) => iv.hi >= a,
        }
    }
}

impl std::str::FromStr for NullSet {
    type Err = Error;

    /// `le:a`, `ge:a` or `eq:a`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "null set must look like le:0, ge:0 or eq:0, got '{s}'"
            ))
        };
        let (shape, value) = s.split_once(':').ok_or_else(bad)?;
        let a: f64 = value.trim().parse().map_err(|_| bad())?;
        match shape.trim() {
            "le" => Ok(NullSet::AtMost(a)),
            "ge" => Ok(NullSet::AtLeast(a)),
            "eq" => Ok(NullSet::Point(a)),
            _ => Err(bad()),
        }
    }
}

/// ITE interval when `Y(observed_arm) = y_obs` is seen and `cf` covers the
/// other potential outcome: `y_obs - cf` for treated units, `cf - y_obs`
/// for controls.
pub fn ite_set_one_missing(observed_arm: u8, y_obs: f64, cf: Interval) -> Interval {
    if observed_arm == 1 {
        cf.reflect_from(y_obs)
    } else {
        cf.shift_down(y_obs)
    }
}

/// ITE interval from sets for both potential outcomes, each built at half
/// the miscoverage: the Minkowski difference `set1 - set0`.
pub fn ite_set_both_missing(set1: Interval, set0: Interval) -> Interval {
    set1.minus(&set0)
}

/// A unit's Gamma-value on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaValue {
    /// Largest grid level whose interval misses `C`, or 1 when none does.
    pub value: f64,
    /// The interval misses `C` even at the top of the grid; the value is
    /// then only known to be at least `value`.
    pub censored: bool,
    /// Whether any hypothesis was rejected (distinguishes a rejection at
    /// `gamma = 1` from no rejection).
    pub rejected_any: bool,
}

impl GammaValue {
    /// `+inf` for censored values.
    pub fn extended(&self) -> f64 {
        if self.censored {
            f64::INFINITY
        } else {
            self.value
        }
    }

    /// Whether `H0(gamma)` is rejected.
    pub fn rejects(&self, gamma: f64) -> bool {
        self.rejected_any && gamma <= self.extended()
    }
}

/// Gamma-value from the ITE intervals at every grid level.
pub fn gamma_value_from_intervals(
    grid: &GammaGrid,
    null: NullSet,
    intervals: &[Interval],
) -> Result<GammaValue> {
    if intervals.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} intervals, got {}",
            grid.len(),
            intervals.len()
        )));
    }
    for (g, w) in intervals.windows(2).enumerate() {
        if !w[0].within(&w[1], NESTING_TOL) {
            return Err(Error::NestednessViolation {
                gamma: grid.values()[g + 1],
            });
        }
    }
    let rejected = intervals
        .iter()
        .take_while(|iv| !null.intersects(iv))
        .count();
    Ok(match rejected {
        0 => GammaValue {
            value: 1.0,
            censored: false,
            rejected_any: false,
        },
        k if k == grid.len() => GammaValue {
            value: grid.max(),
            censored: true,
            rejected_any: true,
        },
        k => GammaValue {
            value: grid.values()[k - 1],
            censored: false,
            rejected_any: true,
        },
    })
}

/// Gamma-value with the ITE interval produced on demand for each level.
pub fn gamma_value(
    grid: &GammaGrid,
    null: NullSet,
    mut builder: impl FnMut(f64) -> Result<Interval>,
) -> Result<GammaValue> {
    let intervals: Vec<Interval> = grid
        .values()
        .iter()
        .map(|&g| builder(g))
        .collect::<Result<_>>()?;
    gamma_value_from_intervals(grid, null, &intervals)
}

/// ITE intervals along a fitted path for a unit that received
/// `observed_arm`; the path predicts the other arm's outcome.
pub fn ite_path_one_missing(
    path: &[FittedThreshold],
    x: &[f64],
    observed_arm: u8,
    y_obs: f64,
) -> Vec<Interval> {
    let band = match path.first() {
        Some(first) => first.score().band(x),
        None => return Vec::new(),
    };
    path.iter()
        .map(|p| ite_set_one_missing(observed_arm, y_obs, band.interval(p.threshold(x))))
        .collect()
}

/// Survival function `S(gamma) = fraction of units with value > gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCurve {
    pub grid: Vec<f64>,
    pub survival: Vec<f64>,
    /// Sorted extended Gamma-values.
    values: Vec<f64>,
}

impl GammaCurve {
    pub fn survival_at(&self, gamma: f64) -> f64 {
        let above = self.values.len() - self.values.partition_point(|&v| v <= gamma);
        above as f64 / self.values.len() as f64
    }

    pub fn n_units(&self) -> usize {
        self.values.len()
    }
}

pub fn survival_curve(values: &[GammaValue], grid: &GammaGrid) -> Result<GammaCurve> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sorted: Vec<f64> = values.iter().map(GammaValue::extended).collect();
    sorted.sort_by(f64::total_cmp);
    let mut curve = GammaCurve {
        grid: grid.values().to_vec(),
        survival: Vec::new(),
        values: sorted,
    };
    curve.survival = curve.grid.iter().map(|&g| curve.survival_at(g)).collect();
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwerReport {
    /// Fraction of all units with a false rejection.
    pub fwer: f64,
    pub n_units: usize,
    pub n_true_null: usize,
    pub n_false_rejections: usize,
    /// No unit has its ITE in `C`, so no error is possible.
    pub no_true_null: bool,
}

/// A unit makes a false rejection when its ITE lies in `C` and some
/// `H0(gamma)` with `gamma >= gamma_star` is rejected.
pub fn fwer(values: &[GammaValue], ites: &[f64], null: NullSet, gamma_star: f64) -> FwerReport {
    assert_eq!(values.len(), ites.len(), "one ITE per Gamma-value");
    let n_true_null = ites.iter().filter(|&&ite| null.contains(ite)).count();
    let n_false_rejections = values
        .iter()
        .zip(ites)
        .filter(|(v, &ite)| null.contains(ite) && v.rejects(gamma_star))
        .count();
    let n_units = values.len();
    FwerReport {
        fwer: if n_units == 0 {
            0.0
        } else {
            n_false_rejections as f64 / n_units as f64
        },
        n_units,
        n_true_null,
        n_false_rejections,
        no_true_null: n_true_null == 0,
    }
}

/// `FDP(gamma) = #{value > gamma, ITE in C} / #{value > gamma}`, 0 when
/// nothing is rejected.
pub fn fdp(values: &[GammaValue], ites: &[f64], null: NullSet, grid: &GammaGrid) -> Vec<f64> {
    assert_eq!(values.len(), ites.len(), "one ITE per Gamma-value");
    grid.values()
        .iter()
        .map(|&g| {
            let (mut rejected, mut false_rej) = (0usize, 0usize);
            for (v, &ite) in values.iter().zip(ites) {
                if v.extended() > g {
                    rejected += 1;
                    if null.contains(ite) {
                        false_rej += 1;
                    }
                }
            }
            if rejected == 0 {
                0.0
            } else {
                false_rej as f64 / rejected as f64
            }
        })
        .collect()
}
