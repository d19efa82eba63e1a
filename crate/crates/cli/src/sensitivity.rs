use clap::Args;
use robust_conformal::data::CsvTable;
use robust_conformal::nuisance::{Counterfactual, Population, TargetSpec};
use robust_conformal::sensitivity::{
    gamma_value_from_intervals, ite_path_one_missing, survival_curve,
};
use robust_conformal::{
    CounterfactualPredictor, FittedThreshold, GammaGrid, GammaValue, NullSet, ScoreKind,
};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{num, write_csv, write_json, Stamp};
use crate::pipeline::{parse_grid, read_covariates, Common, Folds};
use crate::settings::Settings;

/// Gamma-values for the units of a test CSV and their survival curve.
///
/// Treated units get a prediction set for `Y(0)` calibrated to the treated
/// population, control units one for `Y(1)` calibrated to the controls.
#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// Training CSV (x1..xp, t, y), split into fitting and calibration folds.
    #[arg(long)]
    pub train: Option<String>,
    /// CSV of test units with columns x1..xp, t, y.
    #[arg(long)]
    pub test: Option<String>,
    /// Output CSV of per-unit Gamma-values.
    #[arg(long)]
    pub out: Option<String>,
    /// Output CSV of the survival curve.
    #[arg(long)]
    pub survival: Option<String>,
    /// Run manifest; defaults to the output path with extension .json.
    #[arg(long)]
    pub manifest: Option<String>,
    /// Null set for the ITE: le:c, ge:c or eq:c [default: le:0]
    #[arg(long)]
    pub null: Option<String>,
    /// default, STEP:MAX, or a comma-separated list starting at 1 [default: default]
    #[arg(long)]
    pub grid: Option<String>,
    /// Miscoverage level [default: 0.1]
    #[arg(long)]
    pub alpha: Option<String>,
    /// Calibration failure probability for alg2 [default: 0.05]
    #[arg(long)]
    pub delta: Option<String>,
    /// alg1, alg2:plugin, alg2:hoeffding or alg2:wsr [default: alg1]
    #[arg(long)]
    pub method: Option<String>,
    /// Share of the training rows used for fitting [default: 0.5]
    #[arg(long)]
    pub train_fraction: Option<String>,
    /// Split seed [default: 0]
    #[arg(long)]
    pub seed: Option<String>,
    /// Bound M on the likelihood-ratio upper bound for alg2 [default: largest calibration value]
    #[arg(long)]
    pub bound_m: Option<String>,
}

/// Score whose prediction sets bound the ITE on the side the null needs.
fn score_for(null: NullSet, observed_arm: u8) -> ScoreKind {
    match (null, observed_arm) {
        (NullSet::Point(_), _) => ScoreKind::CqrTwoSided,
        (NullSet::AtMost(_), 1) | (NullSet::AtLeast(_), 0) => ScoreKind::CqrOneSided,
        _ => ScoreKind::CqrOneSidedLower,
    }
}

fn arm_path(
    folds: &Folds,
    common: &Common,
    null: NullSet,
    grid: &GammaGrid,
    observed_arm: u8,
) -> CliResult<Vec<FittedThreshold>> {
    let spec = if observed_arm == 1 {
        TargetSpec::new(Counterfactual::Y0, Population::Att)?
    } else {
        TargetSpec::new(Counterfactual::Y1, Population::Atc)?
    };
    let predictor: CounterfactualPredictor =
        folds.predictor(spec, score_for(null, observed_arm), common.alpha)?;
    Ok(predictor.path(grid.values(), common.alpha, &common.procedure())?)
}

fn test_units(table: &CsvTable, path: &std::path::Path) -> CliResult<Vec<(u8, f64)>> {
    (0..table.len())
        .map(|i| match (table.t[i], table.y[i]) {
            (Some(t), Some(y)) => Ok((t, y)),
            _ => Err(CliError::Input(format!(
                "{}: row {}: columns `t` and `y` are required",
                path.display(),
                i + 2
            ))),
        })
        .collect()
}

pub fn run(args: &SensitivityArgs, s: &mut Settings) -> CliResult<()> {
    let train = s.input("train", &args.train)?;
    let test = s.input("test", &args.test)?;
    let out = s.required_output("out", &args.out)?;
    let survival_out = s
        .output("survival", &args.survival)?
        .unwrap_or_else(|| out.with_extension("survival.csv"));
    let manifest = s
        .output("manifest", &args.manifest)?
        .unwrap_or_else(|| out.with_extension("json"));
    let common = Common::resolve(
        s,
        &args.alpha,
        &args.delta,
        &args.method,
        &args.train_fraction,
        &args.seed,
        &args.bound_m,
    )?;
    let null: NullSet = s.get("null", &args.null, "le:0")?;
    let grid_raw: String = s.get("grid", &args.grid, "default")?;
    let grid = parse_grid("grid", &grid_raw)?;
    s.finish()?;

    let folds = Folds::load(&train, common.train_fraction, common.seed)?;
    let table = read_covariates(&test, folds.dim())?;
    let units = test_units(&table, &test)?;
    let mut paths: [Option<Vec<FittedThreshold>>; 2] = [None, None];
    for arm in [0u8, 1] {
        if units.iter().any(|u| u.0 == arm) {
            paths[arm as usize] = Some(arm_path(&folds, &common, null, &grid, arm)?);
        }
    }

    let values: Vec<GammaValue> = table
        .x
        .iter()
        .zip(&units)
        .map(|(x, &(t, y))| {
            let path = paths[t as usize]
                .as_ref()
                .expect("path built for every observed arm");
            let intervals = ite_path_one_missing(path, x, t, y);
            Ok(gamma_value_from_intervals(&grid, null, &intervals)?)
        })
        .collect::<CliResult<_>>()?;
    let curve = survival_curve(&values, &grid)?;

    let stamp = Stamp {
        hash: s.hash(),
        seed: common.seed,
    };
    write_csv(
        &out,
        stamp.header(&["row", "t", "y", "gamma_value", "censored", "rejected_any"]),
        values
            .iter()
            .zip(&units)
            .enumerate()
            .map(|(i, (v, &(t, y)))| {
                stamp.row(vec![
                    i.to_string(),
                    t.to_string(),
                    num(y),
                    num(v.value),
                    v.censored.to_string(),
                    v.rejected_any.to_string(),
                ])
            }),
    )?;
    write_csv(
        &survival_out,
        stamp.header(&["gamma", "survival"]),
        grid.values()
            .iter()
            .zip(&curve.survival)
            .map(|(g, sv)| stamp.row(vec![num(*g), num(*sv)])),
    )?;
    write_json(
        &manifest,
        &json!({
            "command": "sensitivity",
            "config_hash": stamp.hash,
            "seed": stamp.seed,
            "config": s.resolved(),
            "n_fit": folds.fit.len(),
            "n_calib": folds.calib.len(),
            "n_test": values.len(),
            "n_censored": values.iter().filter(|v| v.censored).count(),
            "grid_max": grid.max(),
        }),
    )
}
