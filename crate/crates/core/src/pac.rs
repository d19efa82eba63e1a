//! PAC-type robust conformal prediction.
//!
//! The target CDF of the score is bounded below by the envelope
//!
//! ```text
//! G(t) = max{ E[1{V <= t} l(X)], 1 - E[1{V > t} u(X)] }
//! ```
//!
//! and the threshold is the first calibration score at which a lower
//! confidence bound `G_n(t)` for the envelope reaches `1 - alpha`. Three
//! bounds are available: the plug-in mean (no confidence correction), a
//! Hoeffding bound and the betting-martingale (WSR) bound.
//!
//! The confidence bounds hold for each fixed `t` but need not be monotone in
//! `t`. The threshold search uses the running maximum of `G_n` over the
//! sorted scores, which selects the first score where the raw bound reaches
//! the level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::{CalibrationSet, GapPoint};

/// Bisection tolerance for the betting bound.
pub const WSR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeMethod {
    Plugin,
    Hoeffding,
    Wsr,
}

impl std::str::FromStr for EnvelopeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" => Ok(Self::Plugin),
            "hoeffding" => Ok(Self::Hoeffding),
            "wsr" => Ok(Self::Wsr),
            other => Err(Error::InvalidArgument(format!(
                "unknown envelope method '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for EnvelopeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Plugin => "plugin",
            Self::Hoeffding => "hoeffding",
            Self::Wsr => "wsr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacConfig {
    pub delta: f64,
    pub method: EnvelopeMethod,
    /// Upper bound on every `l_i` and `u_i`; defaults to the observed maximum.
    pub bound_m: Option<f64>,
}

impl PacConfig {
    pub fn new(delta: f64, method: EnvelopeMethod) -> Self {
        Self {
            delta,
            method,
            bound_m: None,
        }
    }

    pub fn with_bound(mut self, m: f64) -> Self {
        self.bound_m = Some(m);
        self
    }
}

/// A calibration set together with everything needed to evaluate `G_n`.
#[derive(Debug, Clone)]
pub struct EnvelopeEstimate {
    calib: CalibrationSet,
    method: EnvelopeMethod,
    m: f64,
    delta: f64,
}

impl EnvelopeEstimate {
    pub fn new(calib: CalibrationSet, config: &PacConfig) -> Result<Self> {
        if !(config.delta > 0.0 && config.delta < 1.0) {
            return Err(Error::InvalidLevel(format!(
                "delta must lie in (0, 1), got {}",
                config.delta
            )));
        }
        let observed = calib.max_bound();
        let m = config.bound_m.unwrap_or(observed);
        check_m(m, observed)?;
        Ok(Self {
            calib,
            method: config.method,
            m,
            delta: config.delta,
        })
    }

    pub fn calibration(&self) -> &CalibrationSet {
        &self.calib
    }

    pub fn method(&self) -> EnvelopeMethod {
        self.method
    }

    pub fn bound_m(&self) -> f64 {
        self.m
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `G_n(t)` clamped to `[0, 1]`.
    pub fn eval(&self, t: f64) -> f64 {
        match self.method {
            EnvelopeMethod::Plugin => plugin(&self.calib, t),
            EnvelopeMethod::Hoeffding => hoeffding(&self.calib, t, self.delta, self.m),
            EnvelopeMethod::Wsr => {
                let (lo, hi) = self.wsr_summands(t);
                let gl = self.m * wsr_lower(&lo, self.delta);
                let gu = 1.0 - self.m + self.m * wsr_lower(&hi, self.delta);
                gl.max(gu).clamp(0.0, 1.0)
            }
        }
    }

    /// Whether `G_n(t) >= level`. For the betting bound this avoids the
    /// bisection and is a single pass over the data.
    pub fn reaches(&self, t: f64, level: f64) -> bool {
        if level <= 0.0 {
            return true;
        }
        if level > 1.0 {
            return false;
        }
        match self.method {
            EnvelopeMethod::Wsr => {
                let (lo, hi) = self.wsr_summands(t);
                let threshold = 2.0 / self.delta;
                let c_lo = level / self.m;
                let c_hi = (level - 1.0 + self.m) / self.m;
                wsr_exceeds(&lo, c_lo, self.delta, threshold)
                    || wsr_exceeds(&hi, c_hi, self.delta, threshold)
            }
            _ => self.eval(t) >= level,
        }
    }

    /// The smallest calibration score at which `G_n` reaches `1 - alpha`,
    /// or `+inf` when none does.
    pub fn threshold(&self, alpha: f64) -> f64 {
        self.first_index_from(0, alpha)
            .map_or(f64::INFINITY, |k| self.calib.sorted_score(k + 1))
    }

    /// 0-based sorted position of the threshold among positions `>= start`.
    pub fn first_index_from(&self, start: usize, alpha: f64) -> Option<usize> {
        let level = 1.0 - alpha;
        let sorted = self.calib.sorted_scores();
        match self.method {
            EnvelopeMethod::Plugin | EnvelopeMethod::Hoeffding => {
                let curve = self.monotone_curve(&sorted);
                (start..sorted.len()).find(|&k| curve[k] >= level)
            }
            EnvelopeMethod::Wsr => {
                // Tied scores share one value of t, evaluate it once.
                let mut last: Option<(f64, bool)> = None;
                (start..sorted.len()).find(|&k| {
                    let t = sorted[k];
                    match last {
                        Some((prev, hit)) if prev == t => hit,
                        _ => {
                            let hit = self.reaches(t, level);
                            last = Some((t, hit));
                            hit
                        }
                    }
                })
            }
        }
    }

    /// Plug-in or Hoeffding envelope at each sorted score in O(n).
    fn monotone_curve(&self, sorted: &[f64]) -> Vec<f64> {
        let n = sorted.len();
        let nf = n as f64;
        let order = self.calib.order();
        let lower = self.calib.lower();
        let upper = self.calib.upper();
        let penalty = match self.method {
            EnvelopeMethod::Hoeffding => hoeffding_penalty(n, self.delta, self.m),
            _ => 0.0,
        };
        let total_upper: f64 = upper.iter().sum();
        let mut below_l = 0.0;
        let mut below_u = 0.0;
        let mut out = vec![0.0; n];
        for k in 0..n {
            below_l += lower[order[k]];
            below_u += upper[order[k]];
            out[k] = f64::NAN;
            if k + 1 == n || sorted[k + 1] > sorted[k] {
                let a = below_l / nf;
                let b = 1.0 - (total_upper - below_u).max(0.0) / nf;
                let g = (a.max(b) - penalty).clamp(0.0, 1.0);
                let first = first_tie(sorted, k);
                for slot in &mut out[first..=k] {
                    *slot = g;
                }
            }
        }
        out
    }

    fn wsr_summands(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        wsr_summands(&self.calib, t, self.m)
    }
}

fn first_tie(sorted: &[f64], k: usize) -> usize {
    let mut j = k;
    while j > 0 && sorted[j - 1] == sorted[k] {
        j -= 1;
    }
    j
}

fn check_m(m: f64, observed: f64) -> Result<()> {
    if !(m.is_finite() && m >= observed) {
        return Err(Error::MTooSmall { m, observed });
    }
    Ok(())
}

fn plugin(calib: &CalibrationSet, t: f64) -> f64 {
    let n = calib.len() as f64;
    let mut a = 0.0;
    let mut b = 0.0;
    for ((&v, &l), &u) in calib.scores().iter().zip(calib.lower()).zip(calib.upper()) {
        if v <= t {
            a += l;
        } else {
            b += u;
        }
    }
    (a / n).max(1.0 - b / n).clamp(0.0, 1.0)
}

fn hoeffding_penalty(n: usize, delta: f64, m: f64) -> f64 {
    m * ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

fn hoeffding(calib: &CalibrationSet, t: f64, delta: f64, m: f64) -> f64 {
    let n = calib.len() as f64;
    let mut a = 0.0;
    let mut b = 0.0;
    for ((&v, &l), &u) in calib.scores().iter().zip(calib.lower()).zip(calib.upper()) {
        if v <= t {
            a += l;
        } else {
            b += u;
        }
    }
    ((a / n).max(1.0 - b / n) - hoeffding_penalty(calib.len(), delta, m)).clamp(0.0, 1.0)
}

/// Summands in sample order: `1{V <= t} l / M` and `1 - 1{V > t} u / M`.
fn wsr_summands(calib: &CalibrationSet, t: f64, m: f64) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::with_capacity(calib.len());
    let mut hi = Vec::with_capacity(calib.len());
    for ((&v, &l), &u) in calib.scores().iter().zip(calib.lower()).zip(calib.upper()) {
        if v <= t {
            lo.push(l / m);
            hi.push(1.0);
        } else {
            lo.push(0.0);
            hi.push(1.0 - u / m);
        }
    }
    (lo, hi)
}

/// Betting fractions `nu_j`, which depend on the data only.
fn wsr_bets(f: &[f64], delta: f64) -> Vec<f64> {
    let n = f.len() as f64;
    let log_term = 2.0 * (2.0 / delta).ln();
    let mut bets = Vec::with_capacity(f.len());
    let mut var = 0.25;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for (i, &x) in f.iter().enumerate() {
        bets.push((log_term / (n * var)).sqrt().min(1.0));
        sum += x;
        let mu = (0.5 + sum) / (i as f64 + 2.0);
        sq += (x - mu) * (x - mu);
        var = (0.25 + sq) / (i as f64 + 2.0);
    }
    bets
}

/// Whether `max_i K_i(g)` exceeds `threshold`.
fn wealth_exceeds(f: &[f64], bets: &[f64], g: f64, threshold: f64) -> bool {
    let mut k = 1.0;
    for (&x, &nu) in f.iter().zip(bets) {
        k *= 1.0 + nu * (x - g);
        if k > threshold {
            return true;
        }
    }
    false
}

/// `inf{g in [0, 1] : max_i K_i(g) <= 2 / delta}` by bisection, returning
/// the lower end of the final bracket.
fn wsr_lower(f: &[f64], delta: f64) -> f64 {
    let bets = wsr_bets(f, delta);
    let threshold = 2.0 / delta;
    if !wealth_exceeds(f, &bets, 0.0, threshold) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > WSR_TOL {
        let mid = 0.5 * (lo + hi);
        if wealth_exceeds(f, &bets, mid, threshold) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Whether the betting lower bound of `f` is at least `c`.
fn wsr_exceeds(f: &[f64], c: f64, delta: f64, threshold: f64) -> bool {
    if c <= 0.0 {
        return true;
    }
    if c > 1.0 {
        return false;
    }
    wealth_exceeds(f, &wsr_bets(f, delta), c, threshold)
}

/// Plug-in envelope at `t`, clamped to `[0, 1]`.
pub fn envelope_plugin(calib: &CalibrationSet, t: f64) -> f64 {
    plugin(calib, t)
}

/// Plug-in envelope minus `M sqrt(log(2 / delta) / (2n))`, clamped to `[0, 1]`.
pub fn envelope_hoeffding(calib: &CalibrationSet, t: f64, delta: f64, m: f64) -> Result<f64> {
    check_m(m, calib.max_bound())?;
    Ok(hoeffding(calib, t, delta, m))
}

/// Betting-martingale (WSR) lower confidence bound for the envelope at `t`.
pub fn envelope_wsr(calib: &CalibrationSet, t: f64, delta: f64, m: f64) -> Result<f64> {
    let est = EnvelopeEstimate::new(
        calib.clone(),
        &PacConfig::new(delta, EnvelopeMethod::Wsr).with_bound(m),
    )?;
    Ok(est.eval(t))
}

/// Betting lower bound for the mean of `[0, 1]`-valued summands in the
/// given order.
pub fn wsr_mean_lower_bound(f: &[f64], delta: f64) -> f64 {
    wsr_lower(f, delta)
}

pub fn pac_threshold(calib: &CalibrationSet, alpha: f64, config: &PacConfig) -> Result<f64> {
    Ok(EnvelopeEstimate::new(calib.clone(), config)?.threshold(alpha))
}

/// Thresholds along an increasing sequence of bounds sharing one set of
/// scores. Each search starts where the previous one stopped, so the
/// thresholds are non-decreasing by construction even when the confidence
/// bound is not monotone in the bounds.
pub fn pac_threshold_path(
    calibs: &[CalibrationSet],
    alpha: f64,
    config: &PacConfig,
) -> Result<Vec<f64>> {
    let ms: Vec<Option<f64>> = vec![config.bound_m; calibs.len()];
    path(calibs, &ms, alpha, config)
}

/// As [`pac_threshold_path`] with a separate `M` for each calibration set.
pub fn pac_threshold_path_with_bounds(
    calibs: &[CalibrationSet],
    ms: &[f64],
    alpha: f64,
    config: &PacConfig,
) -> Result<Vec<f64>> {
    if ms.len() != calibs.len() {
        return Err(Error::InvalidArgument(
            "one bound M per calibration set".into(),
        ));
    }
    let ms: Vec<Option<f64>> = ms.iter().copied().map(Some).collect();
    path(calibs, &ms, alpha, config)
}

fn path(
    calibs: &[CalibrationSet],
    ms: &[Option<f64>],
    alpha: f64,
    config: &PacConfig,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(calibs.len());
    let mut start = 0;
    for (calib, &m) in calibs.iter().zip(ms) {
        let est = EnvelopeEstimate::new(
            calib.clone(),
            &PacConfig {
                bound_m: m,
                ..*config
            },
        )?;
        match est.first_index_from(start, alpha) {
            Some(k) => {
                start = k;
                out.push(calib.sorted_score(k + 1));
            }
            None => {
                start = calib.len();
                out.push(f64::INFINITY);
            }
        }
    }
    Ok(out)
}

/// `max{ mean (l - w)+, mean (u - w)- }` over the evaluation points.
pub fn pac_gap(eval: &[GapPoint]) -> f64 {
    assert!(!eval.is_empty(), "gap needs evaluation points");
    let m = eval.len() as f64;
    let over = eval.iter().map(|g| (g.lower - g.w).max(0.0)).sum::<f64>() / m;
    let under = eval.iter().map(|g| (g.w - g.upper).max(0.0)).sum::<f64>() / m;
    over.max(under)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_point() -> CalibrationSet {
        CalibrationSet::new(vec![1.0, 2.0], vec![0.5, 0.5], vec![2.0, 2.0]).unwrap()
    }

    #[test]
    fn plugin_examples() {
        assert_relative_eq!(envelope_plugin(&two_point(), 1.0), 0.25);
        let c = CalibrationSet::unweighted(vec![1.0, 2.0]).unwrap();
        assert_eq!(envelope_plugin(&c, 5.0), 1.0);
        let c = CalibrationSet::new(vec![1.0, 2.0], vec![1.0, 1.0], vec![2.0, 2.0]).unwrap();
        assert_eq!(envelope_plugin(&c, 0.0), 0.0);
    }

    #[test]
    fn hoeffding_example() {
        let c = CalibrationSet::unweighted(vec![0.0; 100]).unwrap();
        let g = envelope_hoeffding(&c, 1.0, 0.05, 1.0).unwrap();
        assert_relative_eq!(g, 1.0 - (40f64.ln() / 200.0).sqrt(), epsilon = 1e-15);
        assert!((g - 0.86419).abs() < 1e-5);
    }

    #[test]
    fn m_must_dominate_bounds() {
        let err = envelope_hoeffding(&two_point(), 1.0, 0.05, 1.5).unwrap_err();
        assert!(matches!(err, Error::MTooSmall { .. }));
        assert!(envelope_wsr(&two_point(), 1.0, 0.05, 1.0).is_err());
    }

    #[test]
    fn wsr_single_observation() {
        assert_eq!(wsr_mean_lower_bound(&[1.0], 0.05), 0.0);
        let c = CalibrationSet::unweighted(vec![0.0]).unwrap();
        assert_eq!(envelope_wsr(&c, 1.0, 0.05, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn plugin_threshold_has_no_correction() {
        let c = CalibrationSet::unweighted((1..=9).map(f64::from).collect()).unwrap();
        let cfg = PacConfig::new(0.1, EnvelopeMethod::Plugin);
        assert_eq!(pac_threshold(&c, 0.1, &cfg).unwrap(), 9.0);
        assert_eq!(pac_threshold(&c, 0.5, &cfg).unwrap(), 5.0);
    }

    #[test]
    fn large_penalty_gives_infinite_threshold() {
        let c = CalibrationSet::unweighted((1..=9).map(f64::from).collect()).unwrap();
        let cfg = PacConfig::new(0.05, EnvelopeMethod::Hoeffding);
        assert_eq!(pac_threshold(&c, 0.1, &cfg).unwrap(), f64::INFINITY);
    }

    #[test]
    fn wsr_approaches_plugin() {
        let n = 200_000;
        let scores: Vec<f64> = (0..n).map(|i| ((i * 7919) % n) as f64).collect();
        let c = CalibrationSet::unweighted(scores).unwrap();
        let t = (n / 2) as f64;
        let plug = envelope_plugin(&c, t);
        let wsr = envelope_wsr(&c, t, 1.0 - 1e-12, 1.0).unwrap();
        assert!((plug - wsr).abs() < 2e-3, "plugin {plug} wsr {wsr}");
    }

    #[test]
    fn wsr_rarely_exceeds_plugin_on_iid_data() {
        // The bound maximises wealth over prefixes, so a lucky prefix can
        // push it past the full-sample mean; on exchangeable data that is rare.
        use rand::Rng;
        let mut rng = crate::rng::seeded(11);
        let mut above = 0;
        let mut total = 0;
        for n in [5usize, 50, 500] {
            for _ in 0..400 {
                let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                let l: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
                let u: Vec<f64> = l.iter().map(|x| x + rng.random_range(0.0..1.0)).collect();
                let c = CalibrationSet::new(v, l, u).unwrap();
                let t = rng.random::<f64>();
                for delta in [0.05, 0.1] {
                    total += 1;
                    if envelope_wsr(&c, t, delta, c.max_bound()).unwrap() > envelope_plugin(&c, t) {
                        above += 1;
                    }
                }
            }
        }
        eprintln!("wsr above plugin in {above} of {total} cases");
        assert!((above as f64) < 0.01 * total as f64);
    }

    #[test]
    fn gap_examples() {
        let one = |lower, upper| {
            [GapPoint {
                lower,
                upper,
                w: 1.0,
            }]
        };
        assert_eq!(pac_gap(&one(0.5, 2.0)), 0.0);
        assert_relative_eq!(pac_gap(&one(1.5, 2.0)), 0.5);
        assert_relative_eq!(pac_gap(&one(0.2, 0.7)), 0.3, epsilon = 1e-15);
    }

    fn instance() -> impl Strategy<Value = CalibrationSet> {
        (1usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..20, n),
                proptest::collection::vec(0.2f64..1.5, n),
                proptest::collection::vec(0.0f64..1.5, n),
            )
                .prop_map(|(v, l, d)| {
                    let u = l.iter().zip(&d).map(|(a, b)| a + b).collect();
                    CalibrationSet::new(v.into_iter().map(f64::from).collect(), l, u).unwrap()
                })
        })
    }

    fn brute_threshold(est: &EnvelopeEstimate, alpha: f64) -> f64 {
        let sorted = est.calibration().sorted_scores();
        let mut best = f64::NEG_INFINITY;
        for &t in &sorted {
            best = best.max(est.eval(t));
            if best >= 1.0 - alpha {
                return t;
            }
        }
        f64::INFINITY
    }

    proptest! {
        #[test]
        fn bounds_sit_below_plugin(c in instance(), t in -1.0f64..21.0, delta in 0.01f64..0.9) {
            let m = c.max_bound();
            let plug = envelope_plugin(&c, t);
            prop_assert!(envelope_hoeffding(&c, t, delta, m).unwrap() <= plug);
        }

        #[test]
        fn wsr_non_increasing_as_delta_shrinks(c in instance(), t in -1.0f64..21.0, d1 in 0.01f64..0.9, d2 in 0.01f64..0.9) {
            let m = c.max_bound();
            let (small, large) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(envelope_wsr(&c, t, small, m).unwrap() <= envelope_wsr(&c, t, large, m).unwrap() + 1e-9);
        }

        #[test]
        fn threshold_matches_repaired_scan(c in instance(), alpha in 0.05f64..0.95, delta in 0.05f64..0.5) {
            for method in [EnvelopeMethod::Plugin, EnvelopeMethod::Hoeffding, EnvelopeMethod::Wsr] {
                let est = EnvelopeEstimate::new(c.clone(), &PacConfig::new(delta, method)).unwrap();
                prop_assert_eq!(est.threshold(alpha), brute_threshold(&est, alpha));
            }
        }

        #[test]
        fn threshold_monotone_in_alpha(c in instance(), a1 in 0.05f64..0.95, a2 in 0.05f64..0.95) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            for method in [EnvelopeMethod::Plugin, EnvelopeMethod::Hoeffding, EnvelopeMethod::Wsr] {
                let est = EnvelopeEstimate::new(c.clone(), &PacConfig::new(0.1, method)).unwrap();
                prop_assert!(est.threshold(lo) >= est.threshold(hi));
            }
        }
    }
}
