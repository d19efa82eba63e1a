use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{to_dataset, Dgp, Effect, Unit};
use super::{check_count, check_level, mean, quantile, sd, BoundsSource, Nuisance, ProcedureSpec};
use crate::error::{Error, Result};
use crate::marginal::{marginal_gap, CalibrationSet, GapNorm, GapPoint, RobustQuantile};
use crate::nuisance::{
    bound_functions, fit_propensity, BoundPair, Counterfactual, Population, TargetSpec,
};
use crate::pac::{pac_gap, EnvelopeEstimate, PacConfig};
use crate::rng;
use crate::scores::{fit_quantile_model, QuantileModel, ScoreBand};
use crate::set::ScoreKind;

/// Configuration of a coverage study.
///
/// `n_train` counts training units of both arms (the propensity model needs
/// both); `n_calib` counts calibration units of the arm whose outcome is
/// predicted; `n_test` counts units from the target population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_train: usize,
    pub n_calib: usize,
    pub n_test: usize,
    /// Units from the observed arm used to evaluate the coverage gaps.
    pub n_gap: usize,
    pub p: usize,
    pub gamma_true: f64,
    /// Confounding level the bounds are built at; defaults to `gamma_true`.
    pub gamma_bounds: Option<f64>,
    pub alphas: Vec<f64>,
    pub delta: f64,
    pub effect: Effect,
    pub counterfactual: Counterfactual,
    pub population: Population,
    pub score: ScoreKind,
    pub bounds: BoundsSource,
    pub procedures: Vec<ProcedureSpec>,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_calib: 500,
            n_test: 100,
            n_gap: 1000,
            p: 4,
            gamma_true: 1.5,
            gamma_bounds: None,
            alphas: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            delta: 0.05,
            effect: Effect::Fixed(0.0),
            counterfactual: Counterfactual::Y1,
            population: Population::Ate,
            score: ScoreKind::CqrTwoSided,
            bounds: BoundsSource::Oracle,
            procedures: vec![ProcedureSpec::Alg1],
            replicates: 100,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_count("n_train", self.n_train)?;
        check_count("n_calib", self.n_calib)?;
        check_count("n_test", self.n_test)?;
        check_count("n_gap", self.n_gap)?;
        check_count("p", self.p)?;
        check_count("replicates", self.replicates)?;
        if self.alphas.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one alpha is required".into(),
            ));
        }
        for &a in &self.alphas {
            check_level("alpha", a)?;
        }
        check_level("delta", self.delta)?;
        for g in std::iter::once(self.gamma_true).chain(self.gamma_bounds) {
            if !(g >= 1.0 && g.is_finite()) {
                return Err(Error::InvalidGamma(g));
            }
        }
        if self.population == Population::General {
            return Err(Error::InvalidArgument(
                "the simulator supports the ate, att and atc populations".into(),
            ));
        }
        if self.procedures.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one procedure is required".into(),
            ));
        }
        Ok(())
    }

    pub fn gamma_for_bounds(&self) -> f64 {
        self.gamma_bounds.unwrap_or(self.gamma_true)
    }
}

/// Coverage of one procedure at one level in one replicate, averaged over
/// the test points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub replicate: usize,
    pub procedure: ProcedureSpec,
    pub alpha: f64,
    pub coverage: f64,
    /// Fraction of test points whose threshold was `+inf`.
    pub infinite_fraction: f64,
    /// The common threshold of a PAC procedure, when finite.
    pub threshold: Option<f64>,
}

/// Empirical coverage gaps of the bounds in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub replicate: usize,
    /// Marginal gap with the sup norm on `1/l`.
    pub marginal_sup: f64,
    /// Marginal gap with the mean of `1/l`.
    pub marginal_mean: f64,
    pub pac: f64,
    /// Mean absolute distance between the bounds used and the oracle ones.
    pub l1_lower: f64,
    pub l1_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub procedure: ProcedureSpec,
    pub alpha: f64,
    pub mean_coverage: f64,
    pub sd_coverage: f64,
    /// Monte Carlo standard error of the mean coverage.
    pub mc_se: f64,
    /// `delta`-quantile of the per-replicate coverage.
    pub coverage_quantile: f64,
    pub infinite_fraction: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub mean_marginal_sup: f64,
    pub max_marginal_sup: f64,
    pub mean_marginal_mean: f64,
    pub max_marginal_mean: f64,
    pub mean_pac: f64,
    pub max_pac: f64,
    pub mean_l1_lower: f64,
    pub mean_l1_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: SimConfig,
    pub true_p1: f64,
    pub summaries: Vec<CoverageSummary>,
    pub gaps: GapSummary,
    pub records: Vec<CoverageRecord>,
    pub gap_records: Vec<GapRecord>,
}

impl CoverageReport {
    pub fn summary(&self, procedure: ProcedureSpec, alpha: f64) -> Option<&CoverageSummary> {
        self.summaries
            .iter()
            .find(|s| s.procedure == procedure && s.alpha == alpha)
    }
}

/// Runs the replicates on the current rayon pool.
pub fn run_coverage_experiment(cfg: &SimConfig) -> Result<CoverageReport> {
    cfg.validate()?;
    let dgp = Dgp::new(cfg.p, cfg.gamma_true, cfg.effect)?;
    let outcomes: Vec<(Vec<CoverageRecord>, GapRecord)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| replicate(cfg, &dgp, r))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut gap_records = Vec::new();
    for (recs, gap) in outcomes {
        records.extend(recs);
        gap_records.push(gap);
    }
    let mut summaries = Vec::new();
    for &procedure in &cfg.procedures {
        for &alpha in &cfg.alphas {
            let rows: Vec<&CoverageRecord> = records
                .iter()
                .filter(|r| r.procedure == procedure && r.alpha == alpha)
                .collect();
            let cov: Vec<f64> = rows.iter().map(|r| r.coverage).collect();
            let inf: Vec<f64> = rows.iter().map(|r| r.infinite_fraction).collect();
            summaries.push(CoverageSummary {
                procedure,
                alpha,
                mean_coverage: mean(&cov),
                sd_coverage: sd(&cov),
                mc_se: sd(&cov) / (cov.len() as f64).sqrt(),
                coverage_quantile: quantile(&cov, cfg.delta),
                infinite_fraction: mean(&inf),
                replicates: cov.len(),
            });
        }
    }
    let col = |f: fn(&GapRecord) -> f64| gap_records.iter().map(f).collect::<Vec<f64>>();
    let max = |xs: Vec<f64>| xs.into_iter().fold(f64::NEG_INFINITY, f64::max);
    let gaps = GapSummary {
        mean_marginal_sup: mean(&col(|g| g.marginal_sup)),
        max_marginal_sup: max(col(|g| g.marginal_sup)),
        mean_marginal_mean: mean(&col(|g| g.marginal_mean)),
        max_marginal_mean: max(col(|g| g.marginal_mean)),
        mean_pac: mean(&col(|g| g.pac)),
        max_pac: max(col(|g| g.pac)),
        mean_l1_lower: mean(&col(|g| g.l1_lower)),
        mean_l1_upper: mean(&col(|g| g.l1_upper)),
    };
    Ok(CoverageReport {
        config: cfg.clone(),
        true_p1: dgp.treated_probability(),
        summaries,
        gaps,
        records,
        gap_records,
    })
}

fn nuisance(cfg: &SimConfig, dgp: &Dgp, train_units: &[Unit]) -> Result<Nuisance> {
    Ok(match cfg.bounds {
        BoundsSource::Oracle => Nuisance {
            propensity: dgp.oracle_propensity(),
            p1: dgp.treated_probability(),
        },
        BoundsSource::Estimated => {
            let train = to_dataset(train_units, cfg.p)?;
            Nuisance {
                propensity: fit_propensity(&train)?,
                p1: train.treated_fraction(),
            }
        }
    })
}

fn replicate(cfg: &SimConfig, dgp: &Dgp, r: usize) -> Result<(Vec<CoverageRecord>, GapRecord)> {
    let mut rng = rng::stream(cfg.seed, r as u64);
    let spec = TargetSpec::new(cfg.counterfactual, cfg.population)?;
    let arm = spec.arm();
    let cf = cfg.counterfactual;

    let train_units = dgp.draw(cfg.n_train, &mut rng);
    let nuis = nuisance(cfg, dgp, &train_units)?;
    let gamma = cfg.gamma_for_bounds();
    let bounds = bound_functions(&spec, gamma, Arc::new(nuis.propensity.clone()), nuis.p1)?;
    let m = nuis.sup_upper(&bounds);

    let arm_train = to_dataset(&train_units, cfg.p)?.arm(arm);
    if arm_train.is_empty() {
        return Err(Error::EmptyFold {
            n: cfg.n_train,
            fraction: 0.0,
        });
    }
    let spans: Vec<(usize, usize)> = {
        let mut off = 0;
        cfg.alphas
            .iter()
            .map(|&a| {
                let len = ScoreBand::levels(cfg.score, a).len();
                off += len;
                (off - len, len)
            })
            .collect()
    };
    let levels: Vec<f64> = cfg
        .alphas
        .iter()
        .flat_map(|&a| ScoreBand::levels(cfg.score, a))
        .collect();
    let model = fit_quantile_model(&arm_train, &levels)?;

    let calib_units = dgp.draw_where(cfg.n_calib, &mut rng, |u| u.t == arm);
    let test_units = dgp.draw_target(cfg.population, cfg.n_test, &mut rng)?;
    let calib_q: Vec<Vec<f64>> = calib_units
        .iter()
        .map(|u| model.quantiles(&u.x, &levels))
        .collect();
    let test_q: Vec<Vec<f64>> = test_units
        .iter()
        .map(|u| model.quantiles(&u.x, &levels))
        .collect();
    let (calib_lower, calib_upper): (Vec<f64>, Vec<f64>) =
        calib_units.iter().map(|u| bounds.bounds(&u.x)).unzip();
    let test_upper: Vec<f64> = test_units.iter().map(|u| bounds.upper(&u.x)).collect();

    let mut records = Vec::new();
    for (&alpha, &(off, len)) in cfg.alphas.iter().zip(&spans) {
        let band = |q: &[f64]| ScoreBand::from_quantiles(cfg.score, &q[off..off + len]);
        let scores: Vec<f64> = calib_units
            .iter()
            .zip(&calib_q)
            .map(|(u, q)| band(q).score(u.outcome(cf)))
            .collect();
        let calib = CalibrationSet::new(scores, calib_lower.clone(), calib_upper.clone())?;
        let test_bands: Vec<ScoreBand> = test_q.iter().map(|q| band(q)).collect();
        for &procedure in &cfg.procedures {
            let thresholds: Vec<f64> = match procedure {
                ProcedureSpec::Alg1 => {
                    let rq = RobustQuantile::new(&calib, alpha);
                    test_upper.iter().map(|&u| rq.threshold(u)).collect()
                }
                ProcedureSpec::Alg2(method) => {
                    let est = EnvelopeEstimate::new(
                        calib.clone(),
                        &PacConfig::new(cfg.delta, method).with_bound(m),
                    )?;
                    vec![est.threshold(alpha); test_units.len()]
                }
            };
            let covered = test_units
                .iter()
                .zip(&test_bands)
                .zip(&thresholds)
                .filter(|((u, b), &v)| b.interval(v).contains(u.outcome(cf)))
                .count();
            let n = test_units.len() as f64;
            let infinite = thresholds.iter().filter(|v| v.is_infinite()).count();
            records.push(CoverageRecord {
                replicate: r,
                procedure,
                alpha,
                coverage: covered as f64 / n,
                infinite_fraction: infinite as f64 / n,
                threshold: match procedure {
                    ProcedureSpec::Alg2(_) if thresholds[0].is_finite() => Some(thresholds[0]),
                    _ => None,
                },
            });
        }
    }

    let gap = gap_record(cfg, dgp, &spec, &bounds, r, &mut rng)?;
    Ok((records, gap))
}

fn gap_record(
    cfg: &SimConfig,
    dgp: &Dgp,
    spec: &TargetSpec,
    bounds: &BoundPair,
    r: usize,
    rng: &mut rng::Rng,
) -> Result<GapRecord> {
    let arm = spec.arm();
    let eval_units = dgp.draw_where(cfg.n_gap, rng, |u| u.t == arm);
    let oracle = bound_functions(
        spec,
        bounds.gamma(),
        Arc::new(dgp.oracle_propensity()),
        dgp.treated_probability(),
    )?;
    let mut points = Vec::with_capacity(eval_units.len());
    let (mut l1_lower, mut l1_upper) = (0.0, 0.0);
    for u in &eval_units {
        let w = dgp.true_ratio(cfg.counterfactual, cfg.population, u)?;
        let point = GapPoint::from_bounds(bounds, &u.x, w);
        let (ol, ou) = oracle.bounds(&u.x);
        l1_lower += (point.lower - ol).abs();
        l1_upper += (point.upper - ou).abs();
        points.push(point);
    }
    let n = eval_units.len() as f64;
    Ok(GapRecord {
        replicate: r,
        marginal_sup: marginal_gap(&points, cfg.n_calib, GapNorm::SupInverseLower),
        marginal_mean: marginal_gap(&points, cfg.n_calib, GapNorm::MeanInverseLower),
        pac: pac_gap(&points),
        l1_lower: l1_lower / n,
        l1_upper: l1_upper / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pac::EnvelopeMethod;

    fn small() -> SimConfig {
        SimConfig {
            n_train: 200,
            n_calib: 60,
            n_test: 50,
            n_gap: 100,
            alphas: vec![0.2, 0.5],
            procedures: vec![
                ProcedureSpec::Alg1,
                ProcedureSpec::Alg2(EnvelopeMethod::Wsr),
            ],
            replicates: 4,
            seed: 7,
            ..SimConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = run_coverage_experiment(&small()).unwrap();
        let b = run_coverage_experiment(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 4 * 2 * 2);
        assert_eq!(a.summaries.len(), 4);
    }

    #[test]
    fn oracle_bounds_have_zero_gap() {
        let report = run_coverage_experiment(&small()).unwrap();
        assert!(report.gaps.max_marginal_sup < 1e-12);
        assert!(report.gaps.max_pac < 1e-12);
        assert!(report.gaps.mean_l1_lower < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = SimConfig {
            alphas: vec![1.5],
            ..small()
        };
        assert!(run_coverage_experiment(&bad).is_err());
        let bad = SimConfig {
            gamma_true: 0.5,
            ..small()
        };
        assert!(run_coverage_experiment(&bad).is_err());
    }
}
