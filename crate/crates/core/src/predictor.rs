//! End-to-end counterfactual prediction: a fitted score, a bound pair and
//! the calibration units of the observed arm, turned into prediction
//! intervals at one or several confounding levels.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::marginal::{CalibrationSet, RobustQuantile};
use crate::nuisance::BoundPair;
use crate::pac::{pac_threshold_path, pac_threshold_path_with_bounds, PacConfig};
use crate::scores::ScoreFn;
use crate::set::{Interval, PredictionSet};

/// Which calibration rule to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Procedure {
    /// Marginal validity; the threshold depends on the test point.
    Marginal,
    /// Validity with probability `1 - delta` over the calibration data; one
    /// threshold for all test points.
    Pac(PacConfig),
}

#[derive(Debug, Clone)]
pub struct CounterfactualPredictor {
    score: ScoreFn,
    bounds: BoundPair,
    calib_x: Vec<Vec<f64>>,
    calib: CalibrationSet,
    propensity_range: Option<(f64, f64)>,
}

impl CounterfactualPredictor {
    /// `calib_x` and `calib_y` are calibration units from the arm whose
    /// outcome is predicted.
    pub fn new(
        score: ScoreFn,
        bounds: BoundPair,
        calib_x: Vec<Vec<f64>>,
        calib_y: &[f64],
    ) -> Result<Self> {
        if calib_x.len() != calib_y.len() {
            return Err(Error::InvalidArgument(
                "calibration covariates and outcomes differ in length".into(),
            ));
        }
        if calib_x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scores: Vec<f64> = calib_x
            .iter()
            .zip(calib_y)
            .map(|(x, &y)| score.score(x, y))
            .collect();
        let calib = CalibrationSet::from_bounds(scores, &calib_x, &bounds)?;
        Ok(Self {
            score,
            bounds,
            calib_x,
            calib,
            propensity_range: None,
        })
    }

    /// Range of the propensity over the covariate space. When set, PAC runs
    /// without an explicit `M` use the supremum of the upper bound over this
    /// range at each confounding level instead of the largest calibration
    /// value.
    pub fn with_propensity_range(mut self, lo: f64, hi: f64) -> Self {
        self.propensity_range = Some((lo, hi));
        self
    }

    /// Uses the units of `calib` in the arm the bound pair's target refers to.
    pub fn from_dataset(score: ScoreFn, bounds: BoundPair, calib: &Dataset) -> Result<Self> {
        let arm = calib.arm(bounds.target().arm());
        let xs: Vec<Vec<f64>> = arm.samples().iter().map(|s| s.x.clone()).collect();
        let ys: Vec<f64> = arm.samples().iter().map(|s| s.y).collect();
        Self::new(score, bounds, xs, &ys)
    }

    pub fn score(&self) -> &ScoreFn {
        &self.score
    }

    pub fn bounds(&self) -> &BoundPair {
        &self.bounds
    }

    pub fn n_calib(&self) -> usize {
        self.calib.len()
    }

    /// Calibration scores and bounds at confounding level `gamma`.
    pub fn calibration(&self, gamma: f64) -> Result<(BoundPair, CalibrationSet)> {
        let bounds = self.bounds.at_gamma(gamma)?;
        let (lower, upper) = self.calib_x.iter().map(|x| bounds.bounds(x)).unzip();
        let calib = self.calib.with_bounds(lower, upper)?;
        Ok((bounds, calib))
    }

    pub fn at_gamma(
        &self,
        gamma: f64,
        alpha: f64,
        procedure: &Procedure,
    ) -> Result<FittedThreshold> {
        Ok(self.path(&[gamma], alpha, procedure)?.remove(0))
    }

    /// Fitted thresholds along an increasing list of confounding levels.
    /// The resulting prediction sets are nested in `gamma`.
    pub fn path(
        &self,
        gammas: &[f64],
        alpha: f64,
        procedure: &Procedure,
    ) -> Result<Vec<FittedThreshold>> {
        if gammas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "confounding levels must be strictly increasing".into(),
            ));
        }
        let calibrated: Vec<(BoundPair, CalibrationSet)> = gammas
            .iter()
            .map(|&g| self.calibration(g))
            .collect::<Result<_>>()?;
        match procedure {
            Procedure::Marginal => Ok(calibrated
                .into_iter()
                .map(|(bounds, calib)| FittedThreshold {
                    score: self.score.clone(),
                    rule: Rule::Marginal(RobustQuantile::new(&calib, alpha)),
                    bounds,
                })
                .collect()),
            Procedure::Pac(config) => {
                let calibs: Vec<CalibrationSet> = calibrated.iter().map(|c| c.1.clone()).collect();
                let thresholds = match (config.bound_m, self.propensity_range) {
                    (None, Some((lo, hi))) => {
                        let ms: Vec<f64> = calibrated
                            .iter()
                            .map(|(b, c)| b.sup_upper(lo, hi).max(c.max_bound()))
                            .collect();
                        pac_threshold_path_with_bounds(&calibs, &ms, alpha, config)?
                    }
                    _ => pac_threshold_path(&calibs, alpha, config)?,
                };
                Ok(calibrated
                    .into_iter()
                    .zip(thresholds)
                    .map(|((bounds, _), v)| FittedThreshold {
                        score: self.score.clone(),
                        rule: Rule::Fixed(v),
                        bounds,
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Rule {
    Marginal(RobustQuantile),
    Fixed(f64),
}

/// A calibrated threshold rule at one confounding level.
#[derive(Debug, Clone)]
pub struct FittedThreshold {
    score: ScoreFn,
    bounds: BoundPair,
    rule: Rule,
}

impl FittedThreshold {
    pub fn gamma(&self) -> f64 {
        self.bounds.gamma()
    }

    pub fn bounds(&self) -> &BoundPair {
        &self.bounds
    }

    pub fn score(&self) -> &ScoreFn {
        &self.score
    }

    /// The threshold `v` for a test point at `x`.
    pub fn threshold(&self, x: &[f64]) -> f64 {
        match &self.rule {
            Rule::Marginal(q) => q.threshold(self.bounds.upper(x)),
            Rule::Fixed(v) => *v,
        }
    }

    /// Threshold for a test point whose upper bound is already known.
    pub fn threshold_for_upper(&self, u_test: f64) -> f64 {
        match &self.rule {
            Rule::Marginal(q) => q.threshold(u_test),
            Rule::Fixed(v) => *v,
        }
    }

    pub fn prediction_set(&self, x: &[f64]) -> PredictionSet {
        self.score.prediction_set(self.threshold(x))
    }

    pub fn interval(&self, x: &[f64]) -> Interval {
        self.score.band(x).interval(self.threshold(x))
    }
}
