//! Marginally valid robust conformal prediction.
//!
//! Given calibration scores `V_i` with likelihood-ratio bounds
//! `l_i <= w_i <= u_i` and the test upper bound `u_{n+1}`, the threshold is
//! `V_[k*]` where `k* = min{k : F(k) >= 1 - alpha}` and
//!
//! ```text
//! F(k) = sum_{i<=k} l_[i] / (sum_{i<=k} l_[i] + sum_{i>k} u_[i] + u_{n+1})
//! ```
//!
//! over the scores sorted ascending. `F(k)` is the smallest value of the
//! weighted empirical CDF at `V_[k]` compatible with the bounds, so the
//! threshold upper-bounds the weighted conformal quantile for any weights
//! inside the bounds. When no `k` qualifies the threshold is `+inf`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::BoundPair;
use crate::quantile::{weighted_inf_quantile, MASS_TOL};

/// Calibration scores with per-unit bounds, kept in sample order together
/// with a stable ascending sort of the scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    scores: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    order: Vec<usize>,
}

impl CalibrationSet {
    pub fn new(scores: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = scores.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if lower.len() != n || upper.len() != n {
            return Err(Error::InvalidArgument(
                "scores and bounds must have equal length".into(),
            ));
        }
        for i in 0..n {
            if scores[i].is_nan() {
                return Err(Error::InvalidArgument(format!("score {i} is NaN")));
            }
            if !(lower[i] > 0.0 && lower[i] <= upper[i] && upper[i].is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "bounds at {i} must satisfy 0 < lower <= upper < inf, got ({}, {})",
                    lower[i], upper[i]
                )));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        Ok(Self {
            scores,
            lower,
            upper,
            order,
        })
    }

    /// Exchangeable case: all bounds equal to one.
    pub fn unweighted(scores: Vec<f64>) -> Result<Self> {
        let n = scores.len();
        Self::new(scores, vec![1.0; n], vec![1.0; n])
    }

    /// Evaluates `bounds` at each calibration covariate.
    pub fn from_bounds(scores: Vec<f64>, xs: &[Vec<f64>], bounds: &BoundPair) -> Result<Self> {
        let (lower, upper) = xs.iter().map(|x| bounds.bounds(x)).unzip();
        Self::new(scores, lower, upper)
    }

    /// Same scores (and therefore the same sort) with new bounds.
    pub fn with_bounds(&self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let mut next = Self::new(self.scores.clone(), lower, upper)?;
        next.order.clone_from(&self.order);
        Ok(next)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Sample-order views.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Positions of the sample-order entries in ascending score order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `V_[k]`, 1-based.
    pub fn sorted_score(&self, k: usize) -> f64 {
        self.scores[self.order[k - 1]]
    }

    pub fn sorted_scores(&self) -> Vec<f64> {
        self.order.iter().map(|&i| self.scores[i]).collect()
    }

    pub fn max_bound(&self) -> f64 {
        self.upper.iter().copied().fold(0.0, f64::max)
    }
}

/// The acceptance rule `F(k) >= 1 - alpha`, written so the linear scan
/// and the binary search evaluate exactly the same expression.
#[inline]
fn reaches_level(prefix_lower: f64, suffix_upper: f64, u_test: f64, alpha: f64) -> bool {
    let den = prefix_lower + suffix_upper + u_test;
    prefix_lower - (1.0 - alpha) * den >= -MASS_TOL * den
}

/// The robust threshold by a single O(n) pass over the sorted scores.
pub fn robust_threshold(calib: &CalibrationSet, u_test: f64, alpha: f64) -> f64 {
    let n = calib.len();
    let sorted_upper: Vec<f64> = calib.order.iter().map(|&i| calib.upper[i]).collect();
    let mut suffix = sorted_upper.iter().sum::<f64>();
    let mut prefix = 0.0;
    for k in 1..=n {
        let i = calib.order[k - 1];
        prefix += calib.lower[i];
        suffix -= sorted_upper[k - 1];
        if reaches_level(prefix, suffix.max(0.0), u_test, alpha) {
            return calib.scores[i];
        }
    }
    f64::INFINITY
}

/// Precomputed prefix/suffix sums for one calibration set and level, so that
/// thresholds for many test points cost O(log n) each.
///
/// `F(k) >= 1 - alpha` is monotone in `k` and, for fixed `k`, in `u_test`,
/// which makes a binary search over `k` exact.
#[derive(Debug, Clone)]
pub struct RobustQuantile {
    alpha: f64,
    sorted_scores: Vec<f64>,
    prefix_lower: Vec<f64>,
    suffix_upper: Vec<f64>,
}

impl RobustQuantile {
    pub fn new(calib: &CalibrationSet, alpha: f64) -> Self {
        let n = calib.len();
        let mut prefix_lower = Vec::with_capacity(n);
        let mut suffix_upper = vec![0.0; n];
        let sorted_upper: Vec<f64> = calib.order.iter().map(|&i| calib.upper[i]).collect();
        let mut suffix = sorted_upper.iter().sum::<f64>();
        let mut prefix = 0.0;
        for k in 0..n {
            prefix += calib.lower[calib.order[k]];
            suffix -= sorted_upper[k];
            prefix_lower.push(prefix);
            suffix_upper[k] = suffix.max(0.0);
        }
        Self {
            alpha,
            sorted_scores: calib.sorted_scores(),
            prefix_lower,
            suffix_upper,
        }
    }

    pub fn threshold(&self, u_test: f64) -> f64 {
        let ok = |k: usize| {
            reaches_level(
                self.prefix_lower[k],
                self.suffix_upper[k],
                u_test,
                self.alpha,
            )
        };
        let n = self.sorted_scores.len();
        if !ok(n - 1) {
            return f64::INFINITY;
        }
        let (mut lo, mut hi) = (0usize, n - 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        self.sorted_scores[lo]
    }
}

/// Weighted conformal quantile with known weights: the `1 - alpha`
/// inf-quantile of `sum_i p_i delta_{V_i} + p_{n+1} delta_{+inf}` with
/// `p_i = w_i / (sum_j w_j + w_test)`.
pub fn weighted_conformal_threshold(scores: &[(f64, f64)], w_test: f64, alpha: f64) -> Result<f64> {
    if scores.iter().any(|&(_, w)| !(w >= 0.0)) || !(w_test >= 0.0) {
        return Err(Error::InvalidArgument(
            "weights must be non-negative".into(),
        ));
    }
    let total: f64 = scores.iter().map(|s| s.1).sum::<f64>() + w_test;
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    Ok(weighted_inf_quantile(scores, w_test, 1.0 - alpha))
}

/// Bounds and true likelihood ratio at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub lower: f64,
    pub upper: f64,
    pub w: f64,
}

impl GapPoint {
    pub fn from_bounds(bounds: &BoundPair, x: &[f64], w: f64) -> Self {
        let (lower, upper) = bounds.bounds(x);
        Self { lower, upper, w }
    }

    fn excess_lower(&self) -> f64 {
        (self.lower - self.w).max(0.0)
    }

    fn shortfall_upper(&self) -> f64 {
        (self.w - self.upper).max(0.0)
    }
}

/// Hölder pair for the marginal gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapNorm {
    /// `q = inf`, `p = 1`
    SupInverseLower,
    /// `q = 1`, `p = inf`
    MeanInverseLower,
}

/// Empirical coverage-gap bound for the marginal procedure with `n`
/// calibration points:
///
/// ```text
/// ||1/l||_q * ( ||(l - w)+||_p + ||(u - w)-||_p + ||w^{1/p} (u - w)-||_p / n )
/// ```
///
/// with expectations replaced by averages over `eval` and the sup norm by
/// the maximum.
pub fn marginal_gap(eval: &[GapPoint], n: usize, norm: GapNorm) -> f64 {
    assert!(!eval.is_empty(), "gap needs evaluation points");
    let m = eval.len() as f64;
    let inv: Vec<f64> = eval.iter().map(|g| 1.0 / g.lower).collect();
    match norm {
        GapNorm::SupInverseLower => {
            let inv_norm = inv.iter().copied().fold(0.0, f64::max);
            let t1 = eval.iter().map(GapPoint::excess_lower).sum::<f64>() / m;
            let t2 = eval.iter().map(GapPoint::shortfall_upper).sum::<f64>() / m;
            let t3 = eval.iter().map(|g| g.w * g.shortfall_upper()).sum::<f64>() / m;
            inv_norm * (t1 + t2 + t3 / n as f64)
        }
        GapNorm::MeanInverseLower => {
            let inv_norm = inv.iter().sum::<f64>() / m;
            let t1 = eval.iter().map(GapPoint::excess_lower).fold(0.0, f64::max);
            let t2 = eval
                .iter()
                .map(GapPoint::shortfall_upper)
                .fold(0.0, f64::max);
            inv_norm * (t1 + t2 + t2 / n as f64)
        }
    }
}
