//! Propensity estimation and likelihood-ratio bounds under confounding
//! level `gamma`.
//!
//! With `r(x) = e(x) / (1 - e(x))`, `p1 = P(T = 1)` and `p0 = 1 - p1`, the
//! bounds on `dQ/dP` for the counterfactual `Y(t)` are
//!
//! | target   | Y(1) lower / upper                     | Y(0) lower / upper                 |
//! |----------|----------------------------------------|------------------------------------|
//! | ATE      | `p1 (1 + 1/(g r))`, `p1 (1 + g/r)`     | `p0 (1 + r/g)`, `p0 (1 + g r)`     |
//! | ATT      | `1`, `1`                               | `(p0/p1) r/g`, `(p0/p1) g r`       |
//! | ATC      | `(p1/p0) / (g r)`, `(p1/p0) g / r`     | `1`, `1`                           |
//! | General  | ATE bounds times `dQ_X/dP_X (x)`       | ATE bounds times `dQ_X/dP_X (x)`   |

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_CLIP: (f64, f64) = (0.01, 0.99);
const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 100;

/// A fitted propensity score `e(x) = P(T = 1 | X = x)`.
pub trait Propensity: Send + Sync {
    fn propensity(&self, x: &[f64]) -> f64;
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic model `e(x) = sigmoid(b0 + b'x)` with outputs clipped into
/// `[clip_lo, clip_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticPropensity {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub clip: (f64, f64),
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticPropensity {
    pub fn from_coefficients(intercept: f64, coef: Vec<f64>) -> Self {
        Self {
            intercept,
            coef,
            clip: DEFAULT_CLIP,
            iterations: 0,
            converged: true,
        }
    }

    pub fn linear_index(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, x)| b * x).sum::<f64>()
    }

    /// Smallest and largest propensity over the box `[lo, hi]^p`. The index
    /// is linear, so the extremes sit at corners.
    pub fn range_over_box(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (mut min_i, mut max_i) = (self.intercept, self.intercept);
        for &b in &self.coef {
            let (a, c) = (b * lo, b * hi);
            min_i += a.min(c);
            max_i += a.max(c);
        }
        (self.clamp(sigmoid(min_i)), self.clamp(sigmoid(max_i)))
    }

    fn clamp(&self, e: f64) -> f64 {
        e.clamp(self.clip.0, self.clip.1)
    }
}

impl Propensity for LogisticPropensity {
    fn propensity(&self, x: &[f64]) -> f64 {
        self.clamp(sigmoid(self.linear_index(x)))
    }
}

/// Logistic regression with intercept by Newton-Raphson (step-halving on
/// the log-likelihood). Stops when the gradient norm drops below 1e-8 or
/// after 100 iterations; separable data simply run out of iterations and
/// rely on clipping.
pub fn fit_propensity(train: &Dataset) -> Result<LogisticPropensity> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = train.len();
    let d = train.dim() + 1;
    let treated = train.samples().iter().filter(|s| s.treated()).count();
    if treated == 0 || treated == n {
        return Err(Error::DegenerateTreatment);
    }
    let z = DMatrix::from_fn(n, d, |i, j| {
        if j == 0 {
            1.0
        } else {
            train.samples()[i].x[j - 1]
        }
    });
    let t = DVector::from_iterator(n, train.samples().iter().map(|s| f64::from(s.t)));

    let loglik = |beta: &DVector<f64>| -> f64 {
        let eta = &z * beta;
        eta.iter()
            .zip(t.iter())
            .map(|(e, t)| t * e - softplus(*e))
            .sum()
    };

    let mut beta = DVector::<f64>::zeros(d);
    let mut ll = loglik(&beta);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..NEWTON_MAX_ITER {
        iterations = it + 1;
        let eta = &z * &beta;
        let p = eta.map(sigmoid);
        let grad = z.transpose() * (&t - &p);
        if grad.norm() < NEWTON_TOL {
            converged = true;
            iterations = it;
            break;
        }
        let w = p.map(|p| p * (1.0 - p));
        let mut hess = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let row = z.row(i);
            hess += w[i] * row.transpose() * row;
        }
        let step = solve_spd(hess, &grad);
        let Some(mut step) = step else { break };
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step;
            let cand_ll = loglik(&cand);
            if cand_ll.is_finite() && cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(LogisticPropensity {
        intercept: beta[0],
        coef: beta.iter().skip(1).copied().collect(),
        clip: DEFAULT_CLIP,
        iterations,
        converged,
    })
}

fn solve_spd(mut h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().amax().max(1.0);
    for ridge in [0.0, 1e-12, 1e-9, 1e-6] {
        if ridge > 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += ridge * scale;
            }
        }
        if let Some(ch) = h.clone().cholesky() {
            return Some(ch.solve(g));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counterfactual {
    Y1,
    Y0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Ate,
    Att,
    Atc,
    General,
}

impl std::str::FromStr for Counterfactual {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "y1" => Ok(Self::Y1),
            "y0" => Ok(Self::Y0),
            _ => Err(Error::InvalidArgument(format!(
                "counterfactual must be y1 or y0, got '{s}'"
            ))),
        }
    }
}

impl std::str::FromStr for Population {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(Self::Ate),
            "att" => Ok(Self::Att),
            "atc" => Ok(Self::Atc),
            _ => Err(Error::InvalidArgument(format!(
                "population must be ate, att or atc, got '{s}'"
            ))),
        }
    }
}

pub type CovariateShift = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The counterfactual to predict and the population it is predicted for.
#[derive(Clone)]
pub struct TargetSpec {
    pub counterfactual: Counterfactual,
    pub population: Population,
    covariate_shift: Option<CovariateShift>,
}

impl std::fmt::Debug for TargetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TargetSpec")
            .field("counterfactual", &self.counterfactual)
            .field("population", &self.population)
            .field("covariate_shift", &self.covariate_shift.is_some())
            .finish()
    }
}

impl TargetSpec {
    /// ATE/ATT/ATC targets. `General` needs [`TargetSpec::general`].
    pub fn new(counterfactual: Counterfactual, population: Population) -> Result<Self> {
        if population == Population::General {
            return Err(Error::InvalidArgument(
                "the general population requires a covariate shift".into(),
            ));
        }
        Ok(Self {
            counterfactual,
            population,
            covariate_shift: None,
        })
    }

    /// Target `Q_X x P_{Y(t)|X}` with covariate shift `dQ_X/dP_X`, which
    /// must be positive.
    pub fn general(counterfactual: Counterfactual, shift: CovariateShift) -> Self {
        Self {
            counterfactual,
            population: Population::General,
            covariate_shift: Some(shift),
        }
    }

    /// The treatment arm whose outcomes are the training data.
    pub fn arm(&self) -> u8 {
        match self.counterfactual {
            Counterfactual::Y1 => 1,
            Counterfactual::Y0 => 0,
        }
    }

    pub fn shift(&self, x: &[f64]) -> f64 {
        self.covariate_shift.as_ref().map_or(1.0, |s| s(x))
    }
}

/// Pointwise bounds `lower(x) <= w(x, y) <= upper(x)` on the likelihood
/// ratio for a target at confounding level `gamma`.
#[derive(Clone)]
pub struct BoundPair {
    target: TargetSpec,
    gamma: f64,
    p1: f64,
    propensity: Arc<dyn Propensity>,
}

impl std::fmt::Debug for BoundPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundPair")
            .field("target", &self.target)
            .field("gamma", &self.gamma)
            .field("p1", &self.p1)
            .finish()
    }
}

/// Builds the bound pair for `spec` at level `gamma` from a propensity
/// model and the treated fraction `p1_hat`.
pub fn bound_functions(
    spec: &TargetSpec,
    gamma: f64,
    propensity: Arc<dyn Propensity>,
    p1_hat: f64,
) -> Result<BoundPair> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidGamma(gamma));
    }
    if !(p1_hat > 0.0 && p1_hat < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "p1 must lie in (0,1), got {p1_hat}"
        )));
    }
    Ok(BoundPair {
        target: spec.clone(),
        gamma,
        p1: p1_hat,
        propensity,
    })
}

/// The table formulas, as a function of the propensity `e` and covariate
/// shift `s` at a point.
pub fn bounds_at(
    counterfactual: Counterfactual,
    population: Population,
    gamma: f64,
    p1: f64,
    e: f64,
    shift: f64,
) -> (f64, f64) {
    let p0 = 1.0 - p1;
    let r = e / (1.0 - e);
    let g = gamma;
    match (counterfactual, population) {
        (Counterfactual::Y1, Population::Ate) => (p1 * (1.0 + 1.0 / (g * r)), p1 * (1.0 + g / r)),
        (Counterfactual::Y1, Population::Att) => (1.0, 1.0),
        (Counterfactual::Y1, Population::Atc) => (p1 / p0 / (g * r), p1 / p0 * g / r),
        (Counterfactual::Y0, Population::Ate) => (p0 * (1.0 + r / g), p0 * (1.0 + g * r)),
        (Counterfactual::Y0, Population::Att) => (p0 / p1 * r / g, p0 / p1 * g * r),
        (Counterfactual::Y0, Population::Atc) => (1.0, 1.0),
        (cf, Population::General) => {
            let (l, u) = bounds_at(cf, Population::Ate, gamma, p1, e, 1.0);
            (shift * l, shift * u)
        }
    }
}

impl BoundPair {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }

    pub fn target(&self) -> &TargetSpec {
        &self.target
    }

    pub fn propensity(&self) -> &dyn Propensity {
        self.propensity.as_ref()
    }

    /// The same model and target at another confounding level.
    pub fn at_gamma(&self, gamma: f64) -> Result<BoundPair> {
        bound_functions(&self.target, gamma, self.propensity.clone(), self.p1)
    }

    /// `(lower(x), upper(x))`
    pub fn bounds(&self, x: &[f64]) -> (f64, f64) {
        self.bounds_for_propensity(self.propensity.propensity(x), self.target.shift(x))
    }

    pub fn lower(&self, x: &[f64]) -> f64 {
        self.bounds(x).0
    }

    pub fn upper(&self, x: &[f64]) -> f64 {
        self.bounds(x).1
    }

    pub fn bounds_for_propensity(&self, e: f64, shift: f64) -> (f64, f64) {
        bounds_at(
            self.target.counterfactual,
            self.target.population,
            self.gamma,
            self.p1,
            e,
            shift,
        )
    }

    /// Supremum of `upper` when the propensity ranges over `[e_lo, e_hi]`
    /// and the covariate shift is 1. Every table cell is monotone in `e`,
    /// so the sup sits at an endpoint.
    pub fn sup_upper(&self, e_lo: f64, e_hi: f64) -> f64 {
        let a = self.bounds_for_propensity(e_lo, 1.0);
        let b = self.bounds_for_propensity(e_hi, 1.0);
        a.0.max(a.1).max(b.0).max(b.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    struct Constant(f64);
    impl Propensity for Constant {
        fn propensity(&self, _x: &[f64]) -> f64 {
            self.0
        }
    }

    const ALL: [(Counterfactual, Population); 6] = [
        (Counterfactual::Y1, Population::Ate),
        (Counterfactual::Y1, Population::Att),
        (Counterfactual::Y1, Population::Atc),
        (Counterfactual::Y0, Population::Ate),
        (Counterfactual::Y0, Population::Att),
        (Counterfactual::Y0, Population::Atc),
    ];

    #[test]
    fn y1_ate_example() {
        let spec = TargetSpec::new(Counterfactual::Y1, Population::Ate).unwrap();
        let b = bound_functions(&spec, 2.0, Arc::new(Constant(0.5)), 0.4).unwrap();
        let (l, u) = b.bounds(&[0.0]);
        assert_relative_eq!(l, 0.6, epsilon = 1e-15);
        assert_relative_eq!(u, 1.2, epsilon = 1e-15);
    }

    #[test]
    fn att_for_treated_outcome_is_one() {
        let spec = TargetSpec::new(Counterfactual::Y1, Population::Att).unwrap();
        let b = bound_functions(&spec, 3.0, Arc::new(Constant(0.2)), 0.3).unwrap();
        assert_eq!(b.bounds(&[1.0, 2.0]), (1.0, 1.0));
    }

    #[test]
    fn gamma_below_one_rejected() {
        let spec = TargetSpec::new(Counterfactual::Y0, Population::Ate).unwrap();
        assert!(matches!(
            bound_functions(&spec, 0.9, Arc::new(Constant(0.5)), 0.5),
            Err(Error::InvalidGamma(_))
        ));
    }

    #[test]
    fn general_needs_shift() {
        assert!(TargetSpec::new(Counterfactual::Y1, Population::General).is_err());
        let spec = TargetSpec::general(Counterfactual::Y1, Arc::new(|x: &[f64]| 1.0 + x[0]));
        let b = bound_functions(&spec, 1.5, Arc::new(Constant(0.4)), 0.5).unwrap();
        let ate = bounds_at(Counterfactual::Y1, Population::Ate, 1.5, 0.5, 0.4, 1.0);
        let (l, u) = b.bounds(&[1.0]);
        assert_relative_eq!(l, 2.0 * ate.0);
        assert_relative_eq!(u, 2.0 * ate.1);
    }

    #[test]
    fn unconfounded_ate_weight_is_inverse_propensity() {
        for e in [0.05, 0.3, 0.5, 0.9] {
            let (l, u) = bounds_at(Counterfactual::Y1, Population::Ate, 1.0, 0.37, e, 1.0);
            assert_relative_eq!(l, 0.37 / e, epsilon = 1e-12);
            assert_relative_eq!(u, 0.37 / e, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn bounds_ordered_and_monotone_in_gamma(
            e in 0.01f64..0.99, p1 in 0.05f64..0.95, g1 in 1.0f64..10.0, dg in 0.0f64..5.0, cell in 0usize..6,
        ) {
            let (cf, pop) = ALL[cell];
            let (l1, u1) = bounds_at(cf, pop, g1, p1, e, 1.0);
            let (l2, u2) = bounds_at(cf, pop, g1 + dg, p1, e, 1.0);
            prop_assert!(l1 > 0.0);
            prop_assert!(l1 <= u1 * (1.0 + 1e-12));
            prop_assert!(l2 <= l1 * (1.0 + 1e-12));
            prop_assert!(u2 >= u1 * (1.0 - 1e-12));
            let (l_one, u_one) = bounds_at(cf, pop, 1.0, p1, e, 1.0);
            prop_assert!((l_one - u_one).abs() <= 1e-12 * u_one);
            if g1 > 1.0 + 1e-9 && !matches!((cf, pop), (Counterfactual::Y1, Population::Att) | (Counterfactual::Y0, Population::Atc)) {
                prop_assert!(l1 < u1);
            }
        }
    }

    fn logistic_data(n: usize, beta: &[f64], seed: u64) -> Dataset {
        let mut r = rng::seeded(seed);
        let samples = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..beta.len() - 1).map(|_| r.random::<f64>()).collect();
                let eta = beta[0] + beta[1..].iter().zip(&x).map(|(b, x)| b * x).sum::<f64>();
                let t = u8::from(r.random::<f64>() < sigmoid(eta));
                Sample::new(x, t, 0.0)
            })
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn balanced_assignment_recovers_treated_fraction() {
        let d = logistic_data(5000, &[0.0, 0.0, 0.0], 11);
        let m = fit_propensity(&d).unwrap();
        assert!(m.converged);
        let p1 = d.treated_fraction();
        let mut r = rng::seeded(5);
        for _ in 0..50 {
            let x = [r.random::<f64>(), r.random::<f64>()];
            // The MLE with intercept matches the treated fraction on
            // average; pointwise agreement is up to sampling noise in the
            // slopes.
            assert!((m.propensity(&x) - p1).abs() < 0.05);
        }
        let mean: f64 =
            d.samples().iter().map(|s| m.propensity(&s.x)).sum::<f64>() / d.len() as f64;
        assert!((mean - p1).abs() < 1e-3);
    }

    #[test]
    fn recovers_coefficients() {
        let d = logistic_data(20000, &[-0.5, 1.0, -2.0], 3);
        let m = fit_propensity(&d).unwrap();
        assert!(m.converged);
        assert!((m.intercept + 0.5).abs() < 0.15);
        assert!((m.coef[0] - 1.0).abs() < 0.15);
        assert!((m.coef[1] + 2.0).abs() < 0.15);
    }

    #[test]
    fn separable_data_is_clipped() {
        let samples = (0..40)
            .map(|i| {
                let x = i as f64 / 40.0;
                Sample::new(vec![x], u8::from(x > 0.5), 0.0)
            })
            .collect();
        let m = fit_propensity(&Dataset::new(samples).unwrap()).unwrap();
        for x in [0.0, 0.2, 0.49, 0.51, 0.9, 1.0] {
            let e = m.propensity(&[x]);
            assert!((0.01..=0.99).contains(&e));
        }
        assert_eq!(m.propensity(&[0.0]), 0.01);
        assert_eq!(m.propensity(&[1.0]), 0.99);
    }

    #[test]
    fn single_arm_is_degenerate() {
        let samples = (0..10)
            .map(|i| Sample::new(vec![i as f64], 1, 0.0))
            .collect();
        let err = fit_propensity(&Dataset::new(samples).unwrap()).unwrap_err();
        assert_eq!(err, Error::DegenerateTreatment);
        assert!(err.to_string().starts_with("degenerate-treatment"));
    }

    #[test]
    fn box_range_hits_corners() {
        let m = LogisticPropensity::from_coefficients(0.0, vec![-0.531, 0.126, -0.312, 0.018]);
        let (lo, hi) = m.range_over_box(0.0, 1.0);
        assert_relative_eq!(lo, sigmoid(-0.843), epsilon = 1e-15);
        assert_relative_eq!(hi, sigmoid(0.144), epsilon = 1e-15);
    }
}
