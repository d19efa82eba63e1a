//! Prediction sets as score sublevel sets, and their interval realisations.

use serde::{Deserialize, Serialize};

/// Which nonconformity score a threshold refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `max{q(x, a/2) - y, y - q(x, 1 - a/2)}`
    CqrTwoSided,
    /// `y - q(x, 1 - a)`; sets are lower half-lines.
    CqrOneSided,
    /// `q(x, a) - y`; sets are upper half-lines.
    CqrOneSidedLower,
    /// `|y - q(x, 1/2)|`
    AbsResidual,
}

impl std::str::FromStr for ScoreKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        match s {
            "cqr_two_sided" => Ok(Self::CqrTwoSided),
            "cqr_one_sided" => Ok(Self::CqrOneSided),
            "cqr_one_sided_lower" => Ok(Self::CqrOneSidedLower),
            "abs_residual" => Ok(Self::AbsResidual),
            _ => Err(crate::error::Error::InvalidArgument(format!(
                "score must be cqr_two_sided, cqr_one_sided, cqr_one_sided_lower or abs_residual, got '{s}'"
            ))),
        }
    }
}

/// `{y : V(x, y) <= threshold}`. A threshold of `+inf` is the whole line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub threshold: f64,
    pub score: ScoreKind,
}

impl PredictionSet {
    pub fn new(threshold: f64, score: ScoreKind) -> Self {
        Self { threshold, score }
    }

    /// Membership given the score value `V(x, y)` of a candidate.
    pub fn contains_score(&self, score: f64) -> bool {
        score <= self.threshold
    }

    pub fn is_everything(&self) -> bool {
        self.threshold == f64::INFINITY
    }
}

/// Closed interval on the extended real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn at_most(hi: f64) -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi,
        }
    }

    pub fn at_least(lo: f64) -> Self {
        Self {
            lo,
            hi: f64::INFINITY,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    /// `self ⊆ other`, allowing `tol` slack at each finite endpoint.
    pub fn within(&self, other: &Interval, tol: f64) -> bool {
        self.is_empty() || (other.lo <= self.lo + tol && self.hi <= other.hi + tol)
    }

    /// `{c - y : y in self}`
    pub fn reflect_from(&self, c: f64) -> Interval {
        Interval {
            lo: c - self.hi,
            hi: c - self.lo,
        }
    }

    /// `{y - c : y in self}`
    pub fn shift_down(&self, c: f64) -> Interval {
        Interval {
            lo: self.lo - c,
            hi: self.hi - c,
        }
    }

    /// Minkowski difference `{a - b : a in self, b in other}`.
    pub fn minus(&self, other: &Interval) -> Interval {
        Interval {
            lo: sub_ext(self.lo, other.hi),
            hi: sub_ext(self.hi, other.lo),
        }
    }
}

/// Extended-real subtraction where `inf - inf` keeps the sign of the
/// minuend (only ever used to widen intervals).
fn sub_ext(a: f64, b: f64) -> f64 {
    let r = a - b;
    if r.is_nan() {
        a
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_is_monotone_in_threshold() {
        let small = PredictionSet::new(0.5, ScoreKind::CqrTwoSided);
        let large = PredictionSet::new(1.5, ScoreKind::CqrTwoSided);
        for v in [-3.0, 0.0, 0.5, 1.0, 1.5, 2.0] {
            if small.contains_score(v) {
                assert!(large.contains_score(v));
            }
        }
        assert!(PredictionSet::new(f64::INFINITY, ScoreKind::AbsResidual).contains_score(1e300));
    }

    #[test]
    fn interval_arithmetic() {
        let a = Interval::new(1.0, 2.0);
        assert_eq!(a.reflect_from(3.0), Interval::new(1.0, 2.0));
        assert_eq!(
            Interval::new(0.0, 4.0).shift_down(1.0),
            Interval::new(-1.0, 3.0)
        );
        assert_eq!(
            Interval::at_most(2.0).reflect_from(5.0),
            Interval::at_least(3.0)
        );
        assert_eq!(
            Interval::REAL_LINE.minus(&Interval::new(0.0, 1.0)),
            Interval::REAL_LINE
        );
        assert!(a.within(&Interval::new(0.0, 2.0), 0.0));
        assert!(!Interval::new(0.0, 3.0).within(&a, 0.0));
    }
}
