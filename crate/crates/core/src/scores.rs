//! Nonconformity scores built on a conditional-quantile model.
//!
//! Any type implementing [`QuantileModel`] can back a score. The baseline
//! is a k-nearest-neighbour empirical quantile, [`KnnQuantileModel`].

use std::sync::Arc;

use crate::data::{check_unit_open, Dataset};
use crate::error::{Error, Result};
use crate::quantile::inf_quantile_sorted;
use crate::set::{Interval, PredictionSet, ScoreKind};

/// A fitted conditional quantile function `q(x, beta)`.
///
/// Implementations must be monotone in `beta` for every `x`.
pub trait QuantileModel: Send + Sync {
    /// `q(x, beta)` for each requested level, in order.
    fn quantiles(&self, x: &[f64], betas: &[f64]) -> Vec<f64>;

    fn quantile(&self, x: &[f64], beta: f64) -> f64 {
        self.quantiles(x, &[beta])[0]
    }
}

/// Empirical quantiles of the outcomes of the `k` nearest training points
/// (Euclidean distance). All points tied with the k-th distance are kept.
#[derive(Debug, Clone)]
pub struct KnnQuantileModel {
    xs: Vec<f64>,
    ys: Vec<f64>,
    p: usize,
    k: usize,
    betas: Vec<f64>,
    k_clamped: bool,
}

impl KnnQuantileModel {
    pub fn k(&self) -> usize {
        self.k
    }

    /// True when the training set was smaller than the default `k`.
    pub fn k_clamped(&self) -> bool {
        self.k_clamped
    }

    /// Levels requested at fit time.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn n_train(&self) -> usize {
        self.ys.len()
    }

    /// Sorted outcomes of the neighbourhood of `x`.
    pub fn neighbourhood(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.p, "query dimension mismatch");
        let n = self.ys.len();
        let dist: Vec<f64> = self
            .xs
            .chunks_exact(self.p)
            .map(|row| row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect();
        let mut ys: Vec<f64> = if self.k == n {
            self.ys.clone()
        } else {
            let mut scratch = dist.clone();
            let (_, kth, _) = scratch.select_nth_unstable_by(self.k - 1, f64::total_cmp);
            let cutoff = *kth;
            dist.iter()
                .zip(&self.ys)
                .filter(|(d, _)| **d <= cutoff)
                .map(|(_, y)| *y)
                .collect()
        };
        ys.sort_by(f64::total_cmp);
        ys
    }
}

impl QuantileModel for KnnQuantileModel {
    fn quantiles(&self, x: &[f64], betas: &[f64]) -> Vec<f64> {
        let ys = self.neighbourhood(x);
        betas.iter().map(|&b| inf_quantile_sorted(&ys, b)).collect()
    }
}

/// Fits the k-NN baseline with `k = max(20, ceil(n / 20))`, clamped to `n`.
pub fn fit_quantile_model(train: &Dataset, betas: &[f64]) -> Result<KnnQuantileModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for &b in betas {
        check_unit_open("beta", b)?;
    }
    let n = train.len();
    let default_k = 20.max(n.div_ceil(20));
    let k = default_k.min(n);
    Ok(KnnQuantileModel {
        xs: train
            .samples()
            .iter()
            .flat_map(|s| s.x.iter().copied())
            .collect(),
        ys: train.samples().iter().map(|s| s.y).collect(),
        p: train.dim(),
        k,
        betas: betas.to_vec(),
        k_clamped: k < default_k,
    })
}

/// Two-sided CQR score `max{q(x, a/2) - y, y - q(x, 1 - a/2)}`.
pub fn cqr_score(model: &dyn QuantileModel, alpha: f64, x: &[f64], y: f64) -> f64 {
    ScoreBand::from_model(ScoreKind::CqrTwoSided, alpha, model, x).score(y)
}

/// One-sided CQR score `y - q(x, 1 - a)`.
pub fn one_sided_score(model: &dyn QuantileModel, alpha: f64, x: &[f64], y: f64) -> f64 {
    ScoreBand::from_model(ScoreKind::CqrOneSided, alpha, model, x).score(y)
}

/// The quantile anchors of a score at a fixed `x`. Scoring many outcomes or
/// many thresholds at the same `x` only needs one model query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBand {
    pub kind: ScoreKind,
    pub lo: f64,
    pub hi: f64,
}

impl ScoreBand {
    /// Quantile levels the score of `kind` needs at miscoverage `alpha`.
    pub fn levels(kind: ScoreKind, alpha: f64) -> Vec<f64> {
        match kind {
            ScoreKind::CqrTwoSided => vec![alpha / 2.0, 1.0 - alpha / 2.0],
            ScoreKind::CqrOneSided => vec![1.0 - alpha],
            ScoreKind::CqrOneSidedLower => vec![alpha],
            ScoreKind::AbsResidual => vec![0.5],
        }
    }

    /// Builds the band from quantile values ordered as in [`Self::levels`].
    pub fn from_quantiles(kind: ScoreKind, q: &[f64]) -> Self {
        let (lo, hi) = match kind {
            ScoreKind::CqrTwoSided => (q[0], q[1]),
            ScoreKind::CqrOneSided => (f64::NEG_INFINITY, q[0]),
            ScoreKind::CqrOneSidedLower => (q[0], f64::INFINITY),
            ScoreKind::AbsResidual => (q[0], q[0]),
        };
        Self { kind, lo, hi }
    }

    pub fn from_model(kind: ScoreKind, alpha: f64, model: &dyn QuantileModel, x: &[f64]) -> Self {
        Self::from_quantiles(kind, &model.quantiles(x, &Self::levels(kind, alpha)))
    }

    pub fn score(&self, y: f64) -> f64 {
        match self.kind {
            ScoreKind::CqrTwoSided => (self.lo - y).max(y - self.hi),
            ScoreKind::CqrOneSided => y - self.hi,
            ScoreKind::CqrOneSidedLower => self.lo - y,
            ScoreKind::AbsResidual => (y - self.lo).abs(),
        }
    }

    /// `{y : score(y) <= threshold}` as an interval (empty when the
    /// threshold is below the score's minimum).
    pub fn interval(&self, threshold: f64) -> Interval {
        match self.kind {
            ScoreKind::CqrTwoSided | ScoreKind::AbsResidual => {
                if threshold == f64::INFINITY {
                    Interval::REAL_LINE
                } else {
                    Interval::new(self.lo - threshold, self.hi + threshold)
                }
            }
            ScoreKind::CqrOneSided => Interval::at_most(self.hi + threshold),
            ScoreKind::CqrOneSidedLower => Interval::at_least(self.lo - threshold),
        }
    }
}

/// A score function: a kind, a fitted quantile model and the miscoverage
/// level the quantile levels were chosen for.
#[derive(Clone)]
pub struct ScoreFn {
    kind: ScoreKind,
    alpha: f64,
    model: Arc<dyn QuantileModel>,
}

impl std::fmt::Debug for ScoreFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoreFn")
            .field("kind", &self.kind)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl ScoreFn {
    pub fn new(kind: ScoreKind, alpha: f64, model: Arc<dyn QuantileModel>) -> Result<Self> {
        check_unit_open("alpha", alpha)?;
        Ok(Self { kind, alpha, model })
    }

    /// Fits the k-NN baseline on `train` for the levels `kind` needs.
    pub fn fit(kind: ScoreKind, alpha: f64, train: &Dataset) -> Result<Self> {
        check_unit_open("alpha", alpha)?;
        let model = fit_quantile_model(train, &ScoreBand::levels(kind, alpha))?;
        Self::new(kind, alpha, Arc::new(model))
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn model(&self) -> &dyn QuantileModel {
        self.model.as_ref()
    }

    pub fn band(&self, x: &[f64]) -> ScoreBand {
        ScoreBand::from_model(self.kind, self.alpha, self.model.as_ref(), x)
    }

    pub fn score(&self, x: &[f64], y: f64) -> f64 {
        self.band(x).score(y)
    }

    pub fn interval(&self, x: &[f64], set: &PredictionSet) -> Interval {
        self.band(x).interval(set.threshold)
    }

    pub fn prediction_set(&self, threshold: f64) -> PredictionSet {
        PredictionSet::new(threshold, self.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use proptest::prelude::*;

    struct FixedBand(f64, f64);
    impl QuantileModel for FixedBand {
        fn quantiles(&self, _x: &[f64], betas: &[f64]) -> Vec<f64> {
            betas
                .iter()
                .map(|&b| if b < 0.5 { self.0 } else { self.1 })
                .collect()
        }
    }

    fn dataset(xs: &[f64], ys: &[f64]) -> Dataset {
        Dataset::new(
            xs.iter()
                .zip(ys)
                .map(|(&x, &y)| Sample::new(vec![x], 1, y))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_outcome_gives_constant_quantiles() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 7.0).collect();
        let m = fit_quantile_model(&dataset(&xs, &[2.5; 50]), &[0.1, 0.9]).unwrap();
        for x in [-3.0, 0.0, 4.0, 100.0] {
            for b in [0.01, 0.1, 0.5, 0.99] {
                assert_eq!(m.quantile(&[x], b), 2.5);
            }
        }
    }

    #[test]
    fn five_points_median() {
        let m = fit_quantile_model(
            &dataset(&[0.0, 1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0, 5.0]),
            &[0.5],
        )
        .unwrap();
        assert_eq!(m.k(), 5);
        assert!(m.k_clamped());
        for x in [-10.0, 2.0, 9.0] {
            assert_eq!(m.quantile(&[x], 0.5), 3.0);
        }
    }

    #[test]
    fn k_rule() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let m = fit_quantile_model(&dataset(&xs, &xs), &[0.5]).unwrap();
        assert_eq!(m.k(), 50);
        assert!(!m.k_clamped());
        let m = fit_quantile_model(&dataset(&xs[..100], &xs[..100]), &[0.5]).unwrap();
        assert_eq!(m.k(), 20);
    }

    #[test]
    fn ties_at_cutoff_are_included() {
        // 21 points at distance 1 from the query, k = 20: all 21 are used.
        let mut xs = vec![1.0; 11];
        xs.extend(vec![-1.0; 10]);
        xs.push(5.0);
        let ys: Vec<f64> = (0..22).map(|i| i as f64).collect();
        let m = fit_quantile_model(&dataset(&xs, &ys), &[0.5]).unwrap();
        assert_eq!(m.neighbourhood(&[0.0]).len(), 21);
    }

    #[test]
    fn cqr_examples() {
        let band = FixedBand(-1.0, 1.0);
        assert_eq!(cqr_score(&band, 0.1, &[0.0], 0.0), -1.0);
        assert_eq!(cqr_score(&band, 0.1, &[0.0], 2.0), 1.0);
        assert_eq!(cqr_score(&band, 0.1, &[0.0], -3.0), 2.0);
    }

    #[test]
    fn one_sided_examples() {
        let band = FixedBand(0.0, 2.0);
        assert_eq!(one_sided_score(&band, 0.1, &[0.0], 2.0), 0.0);
        assert_eq!(one_sided_score(&band, 0.1, &[0.0], 5.0), 3.0);
        let b = ScoreBand::from_model(ScoreKind::CqrOneSided, 0.1, &band, &[0.0]);
        assert_eq!(b.interval(1.0), Interval::at_most(3.0));
    }

    #[test]
    fn unbounded_threshold_is_whole_line() {
        let b = ScoreBand {
            kind: ScoreKind::CqrTwoSided,
            lo: 0.0,
            hi: 1.0,
        };
        assert_eq!(b.interval(f64::INFINITY), Interval::REAL_LINE);
    }

    proptest! {
        #[test]
        fn knn_quantiles_monotone_in_level(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60),
            q in -6.0f64..6.0,
            b1 in 0.01f64..0.99, b2 in 0.01f64..0.99,
        ) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let m = fit_quantile_model(&dataset(&xs, &ys), &[b1, b2]).unwrap();
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            prop_assert!(m.quantile(&[q], lo) <= m.quantile(&[q], hi));
        }

        #[test]
        fn knn_is_order_free(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..40),
            q in -6.0f64..6.0,
            rot in 0usize..40,
        ) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let mut xr = xs.clone();
            let mut yr = ys.clone();
            let r = rot % xs.len();
            xr.rotate_left(r);
            yr.rotate_left(r);
            xr.reverse();
            yr.reverse();
            let a = fit_quantile_model(&dataset(&xs, &ys), &[0.3]).unwrap();
            let b = fit_quantile_model(&dataset(&xr, &yr), &[0.3]).unwrap();
            prop_assert_eq!(a.quantiles(&[q], &[0.1, 0.3, 0.8]), b.quantiles(&[q], &[0.1, 0.3, 0.8]));
        }

        #[test]
        fn set_membership_matches_score(
            lo in -3.0f64..3.0, width in 0.0f64..4.0, v in -2.0f64..3.0, y in -10.0f64..10.0,
            kind_ix in 0usize..4,
        ) {
            let kind = [ScoreKind::CqrTwoSided, ScoreKind::CqrOneSided,
                        ScoreKind::CqrOneSidedLower, ScoreKind::AbsResidual][kind_ix];
            let q = match kind {
                ScoreKind::CqrTwoSided => vec![lo, lo + width],
                _ => vec![lo],
            };
            let band = ScoreBand::from_quantiles(kind, &q);
            let iv = band.interval(v);
            // Interval endpoints are rounded, so stay clear of the boundary.
            prop_assume!((band.score(y) - v).abs() > 1e-9);
            prop_assert_eq!(iv.contains(y), band.score(y) <= v);
        }
    }
}
