//! Data-generating process with confounded treatment assignment.
//!
//! `X ~ Unif[0,1]^p`, `U | X ~ N(0, s(x)^2)` with
//! `s(x) = sqrt(1 + (2.5 x1)^2 / 2)`, and `e(x) = sigmoid(b'x)` with
//! `b = (-0.531, 0.126, -0.312, 0.018, 0, ...)`. Treatment is drawn with
//! probability
//!
//! ```text
//! e(x, u) = a(x) 1{|u| > t(x)} + b(x) 1{|u| <= t(x)},
//! a(x) = e / (e + G (1 - e)),   b(x) = e / (e + (1 - e) / G),
//! ```
//!
//! where `t(x) = s(x) Phi^{-1}((1 + rho(x)) / 2)` and
//! `rho = (e - a) / (b - a)` make `E[e(X, U) | X] = e(X)`. The odds of
//! `e(x, u)` and `e(x)` then differ by at most a factor `G`, and the bounds
//! of the sensitivity model hold with equality on either side of `t(x)`.
//! Outcomes are `Y(0) = b'X + U` and `Y(1) = Y(0) + a` (fixed effect) or
//! `Y(1) = Y(0) + a U` (random effect).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::nuisance::{sigmoid, Counterfactual, LogisticPropensity, Population};
use crate::rng::normal_quantile;

pub const BETA: [f64; 4] = [-0.531, 0.126, -0.312, 0.018];

/// Gauss–Legendre nodes per nonzero coefficient for the treated fraction.
const QUADRATURE_NODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "a")]
pub enum Effect {
    /// `Y(1) = Y(0) + a`
    Fixed(f64),
    /// `Y(1) = Y(0) + a U`
    Random(f64),
}

impl std::str::FromStr for Effect {
    type Err = Error;

    /// `fixed:a` or `random:a`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "effect must look like fixed:0 or random:1, got '{s}'"
            ))
        };
        let (kind, a) = s.split_once(':').ok_or_else(bad)?;
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        if !a.is_finite() {
            return Err(bad());
        }
        match kind.trim() {
            "fixed" => Ok(Self::Fixed(a)),
            "random" => Ok(Self::Random(a)),
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for Effect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fixed(a) => write!(f, "fixed:{a}"),
            Self::Random(a) => write!(f, "random:{a}"),
        }
    }
}

/// One super-population draw; the confounder is kept for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub x: Vec<f64>,
    pub u: f64,
    pub t: u8,
    pub y0: f64,
    pub y1: f64,
    /// `e(x, u)`
    pub e_xu: f64,
}

impl Unit {
    pub fn y(&self) -> f64 {
        if self.t == 1 {
            self.y1
        } else {
            self.y0
        }
    }

    pub fn ite(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn outcome(&self, cf: Counterfactual) -> f64 {
        match cf {
            Counterfactual::Y1 => self.y1,
            Counterfactual::Y0 => self.y0,
        }
    }

    pub fn to_sample(&self) -> Sample {
        Sample::with_potential_outcomes(self.x.clone(), self.t, self.y1, self.y0)
    }
}

pub fn to_dataset(units: &[Unit], p: usize) -> Result<Dataset> {
    Dataset::with_dimension(units.iter().map(Unit::to_sample).collect(), p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dgp {
    p: usize,
    gamma: f64,
    effect: Effect,
    beta: Vec<f64>,
    p1: f64,
}

impl Dgp {
    pub fn new(p: usize, gamma: f64, effect: Effect) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidGamma(gamma));
        }
        let beta: Vec<f64> = (0..p)
            .map(|j| BETA.get(j).copied().unwrap_or(0.0))
            .collect();
        let p1 = expected_sigmoid(&beta);
        Ok(Self {
            p,
            gamma,
            effect,
            beta,
            p1,
        })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn effect(&self) -> Effect {
        self.effect
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn linear(&self, x: &[f64]) -> f64 {
        self.beta.iter().zip(x).map(|(b, x)| b * x).sum()
    }

    pub fn sigma(&self, x: &[f64]) -> f64 {
        (1.0 + 0.5 * (2.5 * x[0]).powi(2)).sqrt()
    }

    /// `e(x) = P(T = 1 | X = x)`
    pub fn propensity(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear(x))
    }

    /// `(a(x), b(x))`
    pub fn selection_bounds(&self, x: &[f64]) -> (f64, f64) {
        let e = self.propensity(x);
        let g = self.gamma;
        (e / (e + g * (1.0 - e)), e / (e + (1.0 - e) / g))
    }

    /// `P(|U| <= t(x) | X = x)`
    pub fn rho(&self, x: &[f64]) -> f64 {
        let e = self.propensity(x);
        let (a, b) = self.selection_bounds(x);
        if b > a {
            ((e - a) / (b - a)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn threshold(&self, x: &[f64]) -> f64 {
        if self.gamma == 1.0 {
            return 0.0;
        }
        self.sigma(x) * normal_quantile(0.5 * (1.0 + self.rho(x)))
    }

    /// `e(x, u) = P(T = 1 | X = x, U = u)`
    pub fn confounded_propensity(&self, x: &[f64], u: f64) -> f64 {
        let (a, b) = self.selection_bounds(x);
        if u.abs() > self.threshold(x) {
            a
        } else {
            b
        }
    }

    /// True `P(T = 1)`.
    pub fn treated_probability(&self) -> f64 {
        self.p1
    }

    /// The propensity model with the true coefficients.
    pub fn oracle_propensity(&self) -> LogisticPropensity {
        LogisticPropensity::from_coefficients(0.0, self.beta.clone())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Unit {
        let x: Vec<f64> = (0..self.p).map(|_| rng.random::<f64>()).collect();
        let z: f64 = rng.sample(StandardNormal);
        let u = self.sigma(&x) * z;
        let e_xu = self.confounded_propensity(&x, u);
        let t = u8::from(rng.random::<f64>() < e_xu);
        let y0 = self.linear(&x) + u;
        let y1 = match self.effect {
            Effect::Fixed(a) => y0 + a,
            Effect::Random(a) => y0 + a * u,
        };
        Unit {
            x,
            u,
            t,
            y0,
            y1,
            e_xu,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Unit> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Draws until `n` units satisfy `keep`; the rest are discarded.
    pub fn draw_where<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        keep: impl Fn(&Unit) -> bool,
    ) -> Vec<Unit> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let unit = self.sample(rng);
            if keep(&unit) {
                out.push(unit);
            }
        }
        out
    }

    /// Units from the population the target refers to.
    pub fn draw_target<R: Rng + ?Sized>(
        &self,
        population: Population,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Unit>> {
        match population {
            Population::Ate => Ok(self.draw(n, rng)),
            Population::Att => Ok(self.draw_where(n, rng, |u| u.t == 1)),
            Population::Atc => Ok(self.draw_where(n, rng, |u| u.t == 0)),
            Population::General => Err(Error::InvalidArgument(
                "the simulator has no covariate shift for the general population".into(),
            )),
        }
    }

    /// True likelihood ratio between the target law of `Y(cf)` and the
    /// observed law of the arm `cf` refers to, at a unit.
    pub fn true_ratio(
        &self,
        cf: Counterfactual,
        population: Population,
        unit: &Unit,
    ) -> Result<f64> {
        let p1 = self.p1;
        let p0 = 1.0 - p1;
        let e = unit.e_xu;
        Ok(match (cf, population) {
            (Counterfactual::Y1, Population::Ate) => p1 / e,
            (Counterfactual::Y1, Population::Att) => 1.0,
            (Counterfactual::Y1, Population::Atc) => (p1 / p0) * (1.0 - e) / e,
            (Counterfactual::Y0, Population::Ate) => p0 / (1.0 - e),
            (Counterfactual::Y0, Population::Att) => (p0 / p1) * e / (1.0 - e),
            (Counterfactual::Y0, Population::Atc) => 1.0,
            (_, Population::General) => {
                return Err(Error::InvalidArgument(
                    "no true ratio for the general population".into(),
                ))
            }
        })
    }
}

/// `E[sigmoid(b'X)]` for `X ~ Unif[0,1]^p` by tensor Gauss–Legendre
/// quadrature over the coordinates with nonzero coefficients.
fn expected_sigmoid(beta: &[f64]) -> f64 {
    let active: Vec<f64> = beta.iter().copied().filter(|b| *b != 0.0).collect();
    if active.is_empty() {
        return 0.5;
    }
    let (nodes, weights) = gauss_legendre_unit(QUADRATURE_NODES);
    let m = nodes.len();
    let mut idx = vec![0usize; active.len()];
    let mut total = 0.0;
    loop {
        let mut z = 0.0;
        let mut w = 1.0;
        for (d, &i) in idx.iter().enumerate() {
            z += active[d] * nodes[i];
            w *= weights[i];
        }
        total += w * sigmoid(z);
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == idx.len() {
                return total;
            }
        }
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let step = pn / dp;
            z -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = 0.5 * (1.0 - z);
        weights[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}
