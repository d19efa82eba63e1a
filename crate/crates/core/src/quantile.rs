//! Quantiles under the convention `Quantile(q, Z) = inf{z : P(Z <= z) >= q}`.

/// Relative slack used when comparing accumulated probability mass against
/// a level, so that e.g. 9 unit weights out of 10 reach level 0.9.
pub const MASS_TOL: f64 = 1e-12;

/// Inf-quantile of the empirical distribution of `sorted` (ascending).
///
/// Returns the `ceil(q * m)`-th smallest value, with `q <= 0` mapping to the
/// minimum.
pub fn inf_quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    assert!(m > 0, "quantile of an empty sample");
    sorted[inf_quantile_rank(m, q) - 1]
}

/// 1-based rank of the inf-quantile among `m` equally weighted atoms.
pub fn inf_quantile_rank(m: usize, q: f64) -> usize {
    let raw = q * m as f64;
    let rank = (raw - MASS_TOL * m as f64).ceil();
    (rank.max(1.0) as usize).min(m)
}

/// Inf-quantile of a discrete distribution given as `(value, mass)` pairs.
/// Masses need not be normalised. Returns `+inf` when the level is not
/// reached by the finite atoms (which happens when `extra_mass_at_infinity`
/// is positive).
pub fn weighted_inf_quantile(atoms: &[(f64, f64)], extra_mass_at_infinity: f64, q: f64) -> f64 {
    let mut sorted: Vec<(f64, f64)> = atoms.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = sorted.iter().map(|a| a.1).sum::<f64>() + extra_mass_at_infinity;
    let mut cum = 0.0;
    for (v, m) in sorted {
        cum += m;
        if cum >= q * total - MASS_TOL * total {
            return v;
        }
    }
    f64::INFINITY
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_five() {
        assert_eq!(inf_quantile_sorted(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5), 3.0);
    }

    #[test]
    fn exact_levels_hit_their_atom() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(inf_quantile_sorted(&xs, 0.9), 9.0);
        assert_eq!(inf_quantile_sorted(&xs, 0.91), 10.0);
        assert_eq!(inf_quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(inf_quantile_sorted(&xs, 1.0), 10.0);
    }

    #[test]
    fn weighted_with_mass_at_infinity() {
        let atoms = [(1.0, 1.0), (2.0, 1.0)];
        assert_eq!(weighted_inf_quantile(&atoms, 2.0, 0.5), 2.0);
        assert_eq!(weighted_inf_quantile(&atoms, 2.0, 0.51), f64::INFINITY);
        assert_eq!(weighted_inf_quantile(&atoms, 0.0, 0.5), 1.0);
    }
}
