//! Exact worst-case target CDFs over likelihood-ratio identification sets,
//! for discrete joint laws.
//!
//! The marginal set contains every `w` with `l <= w <= u` and `E[w] = 1`.
//! The causal set additionally ties `w` to a covariate shift `f(x)`:
//! `w(x, y) = f(x) w0(x, y)` with `l0(x) <= w0 <= u0(x)` and
//! `E[w0 | x] = 1`, which makes it smaller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile::MASS_TOL;

/// Tolerance for probability masses summing to one.
pub const TOTAL_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub score: f64,
    pub mass: f64,
    pub lower: f64,
    pub upper: f64,
}

/// A discrete law of the score with per-atom likelihood-ratio bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalJoint {
    atoms: Vec<Atom>,
}

impl MarginalJoint {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for a in &atoms {
            if !(a.mass > 0.0) || a.score.is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "atom {a:?} needs positive mass and a score"
                )));
            }
            if !(a.lower >= 0.0 && a.lower <= a.upper && a.upper.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "atom {a:?} needs 0 <= lower <= upper < inf"
                )));
            }
        }
        check_total(atoms.iter().map(|a| a.mass).sum())?;
        let d = Self { atoms };
        let (el, eu) = (d.mean_lower(), d.mean_upper());
        if el > 1.0 + MASS_TOL || eu < 1.0 - MASS_TOL {
            return Err(Error::EmptyIdentificationSet(format!(
                "need E[l] <= 1 <= E[u], got E[l] = {el}, E[u] = {eu}"
            )));
        }
        Ok(d)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn mean_lower(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass * a.lower).sum()
    }

    pub fn mean_upper(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass * a.upper).sum()
    }

    /// Distinct scores, ascending.
    pub fn grid(&self) -> Vec<f64> {
        distinct_scores(self.atoms.iter().map(|a| a.score))
    }

    /// `sum_i m_i w_i 1{V_i <= t}` for weights aligned with the atoms.
    pub fn cdf_under(&self, w: &[f64], t: f64) -> f64 {
        self.atoms
            .iter()
            .zip(w)
            .filter(|(a, _)| a.score <= t)
            .map(|(a, w)| a.mass * w)
            .sum()
    }

    /// `H(t) = E[l 1{V <= t} + u 1{V > t}]`.
    fn h(&self, t: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.mass * if a.score <= t { a.lower } else { a.upper })
            .sum()
    }
}

fn check_total(total: f64) -> Result<()> {
    if (total - 1.0).abs() > TOTAL_MASS_TOL {
        return Err(Error::InvalidArgument(format!(
            "masses must sum to 1, got {total}"
        )));
    }
    Ok(())
}

fn distinct_scores(scores: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut grid: Vec<f64> = scores.collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// `max{ E[1{V <= t} l], 1 - E[1{V > t} u] }`.
pub fn worst_cdf_marginal(d: &MarginalJoint, t: f64) -> f64 {
    let mut below = 0.0;
    let mut above = 0.0;
    for a in &d.atoms {
        if a.score <= t {
            below += a.mass * a.lower;
        } else {
            above += a.mass * a.upper;
        }
    }
    below.max(1.0 - above)
}

/// A likelihood ratio attaining the worst-case CDF at every `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalWitness {
    /// `-inf` when `E[u] = 1`, in which case `w = u`.
    pub t_star: f64,
    pub gamma: f64,
    /// Aligned with the atoms of the joint.
    pub w: Vec<f64>,
}

/// With `H(t) = E[l 1{V <= t} + u 1{V > t}]`, `t* = inf{t : H(t) <= 1}` and
/// `gamma = (1 - H(t*)) / (H(t*-) - H(t*))`, the witness puts `l` below `t*`,
/// `u` above it and `gamma u + (1 - gamma) l` on atoms at `t*`.
pub fn worst_witness_marginal(d: &MarginalJoint) -> MarginalWitness {
    let mut prev = d.mean_upper();
    let mut t_star = f64::NEG_INFINITY;
    let mut h_star = prev;
    let mut h_left = prev;
    if prev > 1.0 + MASS_TOL {
        for t in d.grid() {
            let h = d.h(t);
            if h <= 1.0 + MASS_TOL {
                t_star = t;
                h_star = h;
                h_left = prev;
                break;
            }
            prev = h;
        }
    }
    let gamma = if h_left > 1.0 + MASS_TOL && h_left > h_star {
        ((1.0 - h_star) / (h_left - h_star)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let w = d
        .atoms
        .iter()
        .map(|a| {
            if a.score < t_star {
                a.lower
            } else if a.score > t_star {
                a.upper
            } else {
                gamma * a.upper + (1.0 - gamma) * a.lower
            }
        })
        .collect();
    MarginalWitness { t_star, gamma, w }
}

/// Solves `min E[1{V <= t} w]` subject to `l <= w <= u`, `E[w] = 1`
/// greedily: start from `w = l`, spend the remaining mass on atoms above
/// `t` (free), then on atoms at or below `t` in ascending score order.
/// Returns the optimum and the optimising weights.
pub fn lp_oracle_marginal(d: &MarginalJoint, t: f64) -> (f64, Vec<f64>) {
    let mut w: Vec<f64> = d.atoms.iter().map(|a| a.lower).collect();
    let mut budget = 1.0 - d.mean_lower();
    let mut idx: Vec<usize> = (0..d.atoms.len()).collect();
    // Free atoms first, then costly ones; lowest score first inside each group.
    idx.sort_by(|&i, &j| {
        let (a, b) = (&d.atoms[i], &d.atoms[j]);
        (a.score <= t)
            .cmp(&(b.score <= t))
            .then(a.score.total_cmp(&b.score))
            .then(i.cmp(&j))
    });
    for i in idx {
        if budget <= 0.0 {
            break;
        }
        let a = &d.atoms[i];
        let room = a.mass * (a.upper - a.lower);
        let spend = room.min(budget);
        w[i] += spend / a.mass;
        budget -= spend;
    }
    (d.cdf_under(&w, t), w)
}

/// Conditional law of the score at one covariate value, with the covariate
/// shift `f(x)` and the bounds `l0(x) <= 1 <= u0(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGroup {
    pub mass: f64,
    pub shift: f64,
    pub lower0: f64,
    pub upper0: f64,
    /// `(score, conditional mass)`
    pub atoms: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalJoint {
    groups: Vec<CausalGroup>,
}

impl CausalJoint {
    pub fn new(groups: Vec<CausalGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (k, g) in groups.iter().enumerate() {
            if !(g.mass > 0.0 && g.shift >= 0.0 && g.shift.is_finite()) || g.atoms.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "group {k} needs positive mass, finite shift and atoms"
                )));
            }
            if g.atoms.iter().any(|&(v, m)| v.is_nan() || !(m > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "group {k} has a non-positive conditional mass"
                )));
            }
            check_total(g.atoms.iter().map(|a| a.1).sum())?;
            if !(g.lower0 > 0.0 && g.lower0 <= 1.0 && g.upper0 >= 1.0 && g.upper0.is_finite()) {
                return Err(Error::EmptyIdentificationSet(format!(
                    "group {k} needs 0 < l0 <= 1 <= u0, got ({}, {})",
                    g.lower0, g.upper0
                )));
            }
        }
        check_total(groups.iter().map(|g| g.mass).sum())?;
        let shift_mean: f64 = groups.iter().map(|g| g.mass * g.shift).sum();
        if (shift_mean - 1.0).abs() > TOTAL_MASS_TOL {
            return Err(Error::EmptyIdentificationSet(format!(
                "E[f(X)] must be 1, got {shift_mean}"
            )));
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[CausalGroup] {
        &self.groups
    }

    /// The marginal relaxation with `l = f l0` and `u = f u0`.
    pub fn to_marginal(&self) -> Result<MarginalJoint> {
        let atoms = self
            .groups
            .iter()
            .flat_map(|g| {
                g.atoms.iter().map(move |&(score, m)| Atom {
                    score,
                    mass: g.mass * m,
                    lower: g.shift * g.lower0,
                    upper: g.shift * g.upper0,
                })
            })
            .collect();
        MarginalJoint::new(atoms)
    }

    pub fn grid(&self) -> Vec<f64> {
        distinct_scores(self.groups.iter().flat_map(|g| g.atoms.iter().map(|a| a.0)))
    }
}

/// Per-group construction of the causal worst case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalWitnessGroup {
    pub tau: f64,
    /// Conditional inf-quantile at `tau`; `-inf` when `tau <= 0`.
    pub q: f64,
    pub gamma0: f64,
    /// `f(x) w0(x, v)` aligned with the group's atoms.
    pub w: Vec<f64>,
}

/// `w0 = l0` below `q(tau)`, `u0` above, and `gamma0` at `q(tau)`, with
/// `tau = (u0 - 1) / (u0 - l0)` and `gamma0` solving `E[w0 | x] = 1`.
pub fn causal_witness(d: &CausalJoint) -> Result<Vec<CausalWitnessGroup>> {
    d.groups.iter().map(witness_group).collect()
}

fn witness_group(g: &CausalGroup) -> Result<CausalWitnessGroup> {
    if g.upper0 == g.lower0 {
        return Ok(CausalWitnessGroup {
            tau: 0.0,
            q: f64::NEG_INFINITY,
            gamma0: 1.0,
            w: vec![g.shift; g.atoms.len()],
        });
    }
    let tau = (g.upper0 - 1.0) / (g.upper0 - g.lower0);
    let q = if tau <= 0.0 {
        f64::NEG_INFINITY
    } else {
        let mut sorted = g.atoms.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        let mut q = sorted[sorted.len() - 1].0;
        for (v, m) in sorted {
            cum += m;
            if cum >= tau - MASS_TOL {
                q = v;
                break;
            }
        }
        q
    };
    let (mut below, mut at, mut above) = (0.0, 0.0, 0.0);
    for &(v, m) in &g.atoms {
        if v < q {
            below += m;
        } else if v > q {
            above += m;
        } else {
            at += m;
        }
    }
    let gamma0 = if at > 0.0 {
        (1.0 - g.lower0 * below - g.upper0 * above) / at
    } else {
        0.5 * (g.lower0 + g.upper0)
    };
    let slack = 1e-9 * g.upper0;
    if !(gamma0 >= g.lower0 - slack && gamma0 <= g.upper0 + slack) {
        return Err(Error::InvariantViolation(format!(
            "gamma0 = {gamma0} outside [{}, {}]",
            g.lower0, g.upper0
        )));
    }
    let w = g
        .atoms
        .iter()
        .map(|&(v, _)| {
            g.shift
                * if v < q {
                    g.lower0
                } else if v > q {
                    g.upper0
                } else {
                    gamma0
                }
        })
        .collect();
    Ok(CausalWitnessGroup { tau, q, gamma0, w })
}

/// `E[1{V <= t} w*]` for the causal worst-case ratio.
pub fn worst_cdf_causal(d: &CausalJoint, t: f64) -> Result<f64> {
    let witness = causal_witness(d)?;
    Ok(causal_cdf_under(d, &witness, t))
}

/// CDF at `t` induced by a precomputed causal witness.
pub fn causal_cdf_under(d: &CausalJoint, witness: &[CausalWitnessGroup], t: f64) -> f64 {
    d.groups
        .iter()
        .zip(witness)
        .map(|(g, wg)| {
            g.mass
                * g.atoms
                    .iter()
                    .zip(&wg.w)
                    .filter(|(a, _)| a.0 <= t)
                    .map(|(a, w)| a.1 * w)
                    .sum::<f64>()
        })
        .sum()
}
