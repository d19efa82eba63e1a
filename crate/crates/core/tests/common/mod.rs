//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use robust_conformal::worstcase::{Atom, CausalGroup, CausalJoint, MarginalJoint};

/// Feasible marginal instance: a random ratio normalised to mean one, with
/// bounds scaled below and above it. Scores sit on a small integer grid so
/// ties occur.
pub fn random_marginal<R: Rng>(rng: &mut R, max_support: usize) -> MarginalJoint {
    let k = rng.random_range(1..=max_support);
    let mass: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = mass.iter().sum();
    let mass: Vec<f64> = mass.iter().map(|m| m / total).collect();
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..3.0)).collect();
    let mean_w: f64 = mass.iter().zip(&w).map(|(m, w)| m * w).sum();
    let atoms = (0..k)
        .map(|i| {
            let w = w[i] / mean_w;
            let (shrink, grow) = match rng.random_range(0..4) {
                0 => (1.0, 1.0),
                1 => (rng.random_range(0.2..1.0), 1.0),
                2 => (1.0, rng.random_range(1.0..4.0)),
                _ => (rng.random_range(0.2..1.0), rng.random_range(1.0..4.0)),
            };
            Atom {
                score: f64::from(rng.random_range(0..8)),
                mass: mass[i],
                lower: w * shrink,
                upper: w * grow,
            }
        })
        .collect();
    MarginalJoint::new(atoms).expect("generator produces feasible instances")
}

/// Feasible causal instance with up to `max_groups` covariate values and up
/// to `max_atoms` scores per value.
pub fn random_causal<R: Rng>(rng: &mut R, max_groups: usize, max_atoms: usize) -> CausalJoint {
    let g = rng.random_range(1..=max_groups);
    let mass: Vec<f64> = (0..g).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = mass.iter().sum();
    let shift: Vec<f64> = (0..g).map(|_| rng.random_range(0.2..2.0)).collect();
    let mean_shift: f64 = mass.iter().zip(&shift).map(|(m, s)| m / total * s).sum();
    let groups = (0..g)
        .map(|i| {
            let k = rng.random_range(1..=max_atoms);
            let cm: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let ct: f64 = cm.iter().sum();
            let gamma = if rng.random_bool(0.1) {
                1.0
            } else {
                rng.random_range(1.0..4.0)
            };
            CausalGroup {
                mass: mass[i] / total,
                shift: shift[i] / mean_shift,
                lower0: 1.0 / gamma,
                upper0: gamma,
                atoms: cm
                    .iter()
                    .map(|m| (f64::from(rng.random_range(0..6)), m / ct))
                    .collect(),
            }
        })
        .collect();
    CausalJoint::new(groups).expect("generator produces feasible instances")
}
