use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{to_dataset, Dgp, Effect, Unit};
use super::{check_count, check_level, mean, quantile, sd, BoundsSource, Nuisance, ProcedureSpec};
use crate::error::{Error, Result};
use crate::nuisance::{bound_functions, fit_propensity, Counterfactual, Population, TargetSpec};
use crate::pac::{EnvelopeMethod, PacConfig};
use crate::predictor::{CounterfactualPredictor, FittedThreshold, Procedure};
use crate::rng;
use crate::scores::ScoreFn;
use crate::sensitivity::{
    fdp, fwer, gamma_value_from_intervals, ite_set_one_missing, survival_curve, GammaGrid,
    GammaValue, NullSet,
};
use crate::set::ScoreKind;

/// Configuration of a sensitivity study on treated units: `Y(0)` is
/// predicted with a one-sided upper interval, so the ITE interval is
/// `[Y(1) - Y0_hat(X, gamma), inf)`, and the null is `ITE <= 0`.
///
/// `n_train` counts units of both arms; `n_calib` counts control
/// calibration units; `n_test` counts treated test units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub n_train: usize,
    pub n_calib: usize,
    pub n_test: usize,
    pub p: usize,
    pub gamma_true: f64,
    pub alpha: f64,
    pub delta: f64,
    pub effect: Effect,
    pub grid: GammaGrid,
    pub bounds: BoundsSource,
    pub method: EnvelopeMethod,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_calib: 2000,
            n_test: 1000,
            p: 4,
            gamma_true: 1.5,
            alpha: 0.1,
            delta: 0.05,
            effect: Effect::Fixed(0.0),
            grid: GammaGrid::default(),
            bounds: BoundsSource::Estimated,
            method: EnvelopeMethod::Wsr,
            replicates: 100,
            seed: 0,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        check_count("n_train", self.n_train)?;
        check_count("n_calib", self.n_calib)?;
        check_count("n_test", self.n_test)?;
        check_count("p", self.p)?;
        check_count("replicates", self.replicates)?;
        check_level("alpha", self.alpha)?;
        check_level("delta", self.delta)?;
        if !(self.gamma_true >= 1.0 && self.gamma_true.is_finite()) {
            return Err(Error::InvalidGamma(self.gamma_true));
        }
        Ok(())
    }

    fn null(&self) -> NullSet {
        NullSet::AtMost(0.0)
    }
}

/// One algorithm in one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub replicate: usize,
    pub procedure: ProcedureSpec,
    /// Fraction of test units with a false rejection at or above the true
    /// confounding level.
    pub fwer: f64,
    pub n_true_null: usize,
    /// Fraction of test units whose Gamma-value exceeds the true level.
    pub above_gamma_true: f64,
    pub fdp: Vec<f64>,
    pub survival: Vec<f64>,
    pub censored_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySummary {
    pub procedure: ProcedureSpec,
    pub mean_fwer: f64,
    pub sd_fwer: f64,
    /// `1 - delta` quantile of the per-replicate FWER.
    pub fwer_quantile: f64,
    pub mean_above_gamma_true: f64,
    /// Largest FDP over replicates and grid levels.
    pub max_fdp: f64,
    pub mean_fdp: Vec<f64>,
    pub mean_survival: Vec<f64>,
    pub mean_censored_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub config: SensitivityConfig,
    pub summaries: Vec<SensitivitySummary>,
    pub records: Vec<SensitivityRecord>,
}

impl SensitivityReport {
    pub fn summary(&self, procedure: ProcedureSpec) -> Option<&SensitivitySummary> {
        self.summaries.iter().find(|s| s.procedure == procedure)
    }
}

pub fn run_sensitivity_experiment(cfg: &SensitivityConfig) -> Result<SensitivityReport> {
    cfg.validate()?;
    let dgp = Dgp::new(cfg.p, cfg.gamma_true, cfg.effect)?;
    let per_rep: Vec<Vec<SensitivityRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| replicate(cfg, &dgp, r))
        .collect::<Result<_>>()?;
    let records: Vec<SensitivityRecord> = per_rep.into_iter().flatten().collect();
    let procedures = [ProcedureSpec::Alg1, ProcedureSpec::Alg2(cfg.method)];
    let summaries = procedures
        .iter()
        .map(|&procedure| {
            let rows: Vec<&SensitivityRecord> = records
                .iter()
                .filter(|r| r.procedure == procedure)
                .collect();
            let fw: Vec<f64> = rows.iter().map(|r| r.fwer).collect();
            let above: Vec<f64> = rows.iter().map(|r| r.above_gamma_true).collect();
            let censored: Vec<f64> = rows.iter().map(|r| r.censored_fraction).collect();
            let column_mean = |f: fn(&SensitivityRecord) -> &Vec<f64>| -> Vec<f64> {
                (0..cfg.grid.len())
                    .map(|g| mean(&rows.iter().map(|r| f(r)[g]).collect::<Vec<_>>()))
                    .collect()
            };
            SensitivitySummary {
                procedure,
                mean_fwer: mean(&fw),
                sd_fwer: sd(&fw),
                fwer_quantile: quantile(&fw, 1.0 - cfg.delta),
                mean_above_gamma_true: mean(&above),
                max_fdp: rows
                    .iter()
                    .flat_map(|r| r.fdp.iter().copied())
                    .fold(0.0, f64::max),
                mean_fdp: column_mean(|r| &r.fdp),
                mean_survival: column_mean(|r| &r.survival),
                mean_censored_fraction: mean(&censored),
            }
        })
        .collect();
    Ok(SensitivityReport {
        config: cfg.clone(),
        summaries,
        records,
    })
}

fn replicate(cfg: &SensitivityConfig, dgp: &Dgp, r: usize) -> Result<Vec<SensitivityRecord>> {
    let mut rng = rng::stream(cfg.seed, r as u64);
    let train_units = dgp.draw(cfg.n_train, &mut rng);
    let train = to_dataset(&train_units, cfg.p)?;
    let nuis = match cfg.bounds {
        BoundsSource::Oracle => Nuisance {
            propensity: dgp.oracle_propensity(),
            p1: dgp.treated_probability(),
        },
        BoundsSource::Estimated => Nuisance {
            propensity: fit_propensity(&train)?,
            p1: train.treated_fraction(),
        },
    };
    let spec = TargetSpec::new(Counterfactual::Y0, Population::Att)?;
    let bounds = bound_functions(&spec, 1.0, Arc::new(nuis.propensity.clone()), nuis.p1)?;
    let controls = train.arm(0);
    if controls.is_empty() {
        return Err(Error::EmptyFold {
            n: cfg.n_train,
            fraction: 0.0,
        });
    }
    let score = ScoreFn::fit(ScoreKind::CqrOneSided, cfg.alpha, &controls)?;

    let calib_units = dgp.draw_where(cfg.n_calib, &mut rng, |u| u.t == 0);
    let xs: Vec<Vec<f64>> = calib_units.iter().map(|u| u.x.clone()).collect();
    let ys: Vec<f64> = calib_units.iter().map(|u| u.y0).collect();
    let (lo, hi) = nuis.propensity_range();
    let predictor =
        CounterfactualPredictor::new(score, bounds, xs, &ys)?.with_propensity_range(lo, hi);
    let grid = cfg.grid.values();
    let paths = [
        (
            ProcedureSpec::Alg1,
            predictor.path(grid, cfg.alpha, &Procedure::Marginal)?,
        ),
        (
            ProcedureSpec::Alg2(cfg.method),
            predictor.path(
                grid,
                cfg.alpha,
                &Procedure::Pac(PacConfig::new(cfg.delta, cfg.method)),
            )?,
        ),
    ];

    let test_units = dgp.draw_where(cfg.n_test, &mut rng, |u| u.t == 1);
    let ites: Vec<f64> = test_units.iter().map(Unit::ite).collect();
    let mut values: Vec<Vec<GammaValue>> = vec![Vec::with_capacity(test_units.len()); paths.len()];
    for unit in &test_units {
        let band = predictor.score().band(&unit.x);
        for (k, (_, path)) in paths.iter().enumerate() {
            let intervals: Vec<_> = path
                .iter()
                .map(|p: &FittedThreshold| {
                    ite_set_one_missing(1, unit.y1, band.interval(p.threshold(&unit.x)))
                })
                .collect();
            values[k].push(gamma_value_from_intervals(
                &cfg.grid,
                cfg.null(),
                &intervals,
            )?);
        }
    }

    paths
        .iter()
        .zip(&values)
        .map(|((procedure, _), vals)| {
            let report = fwer(vals, &ites, cfg.null(), cfg.gamma_true);
            let n = vals.len() as f64;
            Ok(SensitivityRecord {
                replicate: r,
                procedure: *procedure,
                fwer: report.fwer,
                n_true_null: report.n_true_null,
                above_gamma_true: vals
                    .iter()
                    .filter(|v| v.extended() > cfg.gamma_true)
                    .count() as f64
                    / n,
                fdp: fdp(vals, &ites, cfg.null(), &cfg.grid),
                survival: survival_curve(vals, &cfg.grid)?.survival,
                censored_fraction: vals.iter().filter(|v| v.censored).count() as f64 / n,
            })
        })
        .collect()
}
