use std::path::Path;
use std::sync::Arc;

use robust_conformal::data::read_table;
use robust_conformal::nuisance::{bound_functions, fit_propensity, LogisticPropensity, TargetSpec};
use robust_conformal::simulate::ProcedureSpec;
use robust_conformal::{
    split, CounterfactualPredictor, Dataset, PacConfig, Procedure, ScoreFn, ScoreKind, SplitSpec,
};

use crate::error::{CliError, CliResult};
use crate::settings::{parse_list, Settings};

/// Training data split into a fitting fold and a calibration fold, with the
/// propensity model fit on the first.
pub struct Folds {
    pub fit: Dataset,
    pub calib: Dataset,
    pub propensity: LogisticPropensity,
}

impl Folds {
    pub fn load(path: &Path, train_fraction: f64, seed: u64) -> CliResult<Self> {
        let data = Dataset::from_csv_path(path)?;
        let (fit, calib) = split(
            &data,
            SplitSpec {
                train_fraction,
                seed,
            },
        )?;
        let propensity = fit_propensity(&fit)?;
        Ok(Self {
            fit,
            calib,
            propensity,
        })
    }

    pub fn dim(&self) -> usize {
        self.fit.dim()
    }

    /// Score fit on the fitting fold's units in the target arm, bounds at
    /// `gamma = 1`, calibration on the calibration fold's units in that arm.
    pub fn predictor(
        &self,
        spec: TargetSpec,
        kind: ScoreKind,
        alpha: f64,
    ) -> CliResult<CounterfactualPredictor> {
        let arm = spec.arm();
        let bounds = bound_functions(
            &spec,
            1.0,
            Arc::new(self.propensity.clone()),
            self.fit.treated_fraction(),
        )?;
        let train_arm = self.fit.arm(arm);
        if train_arm.is_empty() {
            return Err(CliError::Input(format!(
                "training fold has no units with t = {arm}"
            )));
        }
        if self.calib.arm(arm).is_empty() {
            return Err(CliError::Input(format!(
                "calibration fold has no units with t = {arm}"
            )));
        }
        let score = ScoreFn::fit(kind, alpha, &train_arm)?;
        Ok(CounterfactualPredictor::from_dataset(
            score,
            bounds,
            &self.calib,
        )?)
    }
}

pub fn procedure(method: ProcedureSpec, delta: f64, bound_m: Option<f64>) -> Procedure {
    match method {
        ProcedureSpec::Alg1 => Procedure::Marginal,
        ProcedureSpec::Alg2(m) => {
            let config = PacConfig::new(delta, m);
            Procedure::Pac(match bound_m {
                Some(b) => config.with_bound(b),
                None => config,
            })
        }
    }
}

/// Settings shared by `predict` and `sensitivity`.
pub struct Common {
    pub alpha: f64,
    pub delta: f64,
    pub method: ProcedureSpec,
    pub train_fraction: f64,
    pub seed: u64,
    pub bound_m: Option<f64>,
}

impl Common {
    #[allow(clippy::too_many_arguments)]
    pub fn resolve(
        s: &mut Settings,
        alpha: &Option<String>,
        delta: &Option<String>,
        method: &Option<String>,
        train_fraction: &Option<String>,
        seed: &Option<String>,
        bound_m: &Option<String>,
    ) -> CliResult<Self> {
        Ok(Self {
            alpha: s.get("alpha", alpha, "0.1")?,
            delta: s.get("delta", delta, "0.05")?,
            method: s.get("method", method, "alg1")?,
            train_fraction: s.get("train-fraction", train_fraction, "0.5")?,
            seed: s.get("seed", seed, "0")?,
            bound_m: s.optional("bound-m", bound_m)?,
        })
    }

    pub fn procedure(&self) -> Procedure {
        procedure(self.method, self.delta, self.bound_m)
    }
}

/// Covariates of a CSV, checked against the training dimension.
pub fn read_covariates(path: &Path, dim: usize) -> CliResult<robust_conformal::data::CsvTable> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let table = read_table(file, false)?;
    if let Some((i, x)) = table.x.iter().enumerate().find(|(_, x)| x.len() != dim) {
        return Err(CliError::Input(format!(
            "{}: row {}: expected {dim} covariates as in the training data, found {}",
            path.display(),
            i + 2,
            x.len()
        )));
    }
    Ok(table)
}

/// `default`, `STEP:MAX` for a regular grid from 1, or a comma-separated list.
pub fn parse_grid(key: &str, raw: &str) -> CliResult<robust_conformal::GammaGrid> {
    use robust_conformal::GammaGrid;
    let grid = if raw == "default" {
        Ok(GammaGrid::default())
    } else if let Some((step, max)) = raw.split_once(':') {
        let step: f64 = step
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: bad step '{step}'")))?;
        let max: f64 = max
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: bad maximum '{max}'")))?;
        GammaGrid::regular(step, max)
    } else {
        GammaGrid::new(parse_list(key, raw)?)
    };
    Ok(grid?)
}
