use clap::Args;
use robust_conformal::nuisance::{Counterfactual, Population, TargetSpec};
use robust_conformal::ScoreKind;
use serde_json::json;

use crate::error::CliResult;
use crate::output::{endpoint, json_num, write_csv, write_json, Stamp};
use crate::pipeline::{read_covariates, Common, Folds};
use crate::settings::{parse_list, Settings};

/// Counterfactual prediction intervals for the rows of a covariate CSV.
#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Training CSV (x1..xp, t, y), split into fitting and calibration folds.
    #[arg(long)]
    pub train: Option<String>,
    /// CSV with covariate columns x1..xp.
    #[arg(long)]
    pub test: Option<String>,
    /// Output CSV of intervals.
    #[arg(long)]
    pub out: Option<String>,
    /// Run manifest; defaults to the output path with extension .json.
    #[arg(long)]
    pub manifest: Option<String>,
    /// Miscoverage level [default: 0.1]
    #[arg(long)]
    pub alpha: Option<String>,
    /// Calibration failure probability for alg2 [default: 0.05]
    #[arg(long)]
    pub delta: Option<String>,
    /// Comma-separated increasing confounding levels [default: 1]
    #[arg(long)]
    pub gamma: Option<String>,
    /// alg1, alg2:plugin, alg2:hoeffding or alg2:wsr [default: alg1]
    #[arg(long)]
    pub method: Option<String>,
    /// cqr_two_sided, cqr_one_sided, cqr_one_sided_lower or abs_residual [default: cqr_two_sided]
    #[arg(long)]
    pub score: Option<String>,
    /// y1 or y0 [default: y1]
    #[arg(long)]
    pub counterfactual: Option<String>,
    /// ate, att or atc [default: ate]
    #[arg(long)]
    pub population: Option<String>,
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

pub fn run(args: &PredictArgs, s: &mut Settings) -> CliResult<()> {
    let train = s.input("train", &args.train)?;
    let test = s.input("test", &args.test)?;
    let out = s.required_output("out", &args.out)?;
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
    let gamma_raw: String = s.get("gamma", &args.gamma, "1")?;
    let gammas: Vec<f64> = parse_list("gamma", &gamma_raw)?;
    let kind: ScoreKind = s.get("score", &args.score, "cqr_two_sided")?;
    let cf: Counterfactual = s.get("counterfactual", &args.counterfactual, "y1")?;
    let pop: Population = s.get("population", &args.population, "ate")?;
    s.finish()?;
    let spec = TargetSpec::new(cf, pop)?;

    let folds = Folds::load(&train, common.train_fraction, common.seed)?;
    let table = read_covariates(&test, folds.dim())?;
    let predictor = folds.predictor(spec, kind, common.alpha)?;
    let path = predictor.path(&gammas, common.alpha, &common.procedure())?;

    let stamp = Stamp {
        hash: s.hash(),
        seed: common.seed,
    };
    let mut cols = vec!["row".to_string()];
    for g in &gammas {
        for c in [
            "lo",
            "hi",
            "unbounded_lo",
            "unbounded_hi",
            "threshold",
            "unbounded_threshold",
        ] {
            cols.push(format!("{c}_g{g}"));
        }
    }
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let rows = table.x.iter().enumerate().map(|(i, x)| {
        let mut cells = vec![i.to_string()];
        for fitted in &path {
            let v = fitted.threshold(x);
            let iv = fitted.score().band(x).interval(v);
            let [lo, lo_inf] = endpoint(iv.lo);
            let [hi, hi_inf] = endpoint(iv.hi);
            let [th, th_inf] = endpoint(v);
            cells.extend([lo, hi, lo_inf, hi_inf, th, th_inf]);
        }
        stamp.row(cells)
    });
    write_csv(&out, stamp.header(&col_refs), rows)?;

    let pac_thresholds: Vec<_> = match common.method {
        robust_conformal::simulate::ProcedureSpec::Alg1 => vec![],
        _ => path
            .iter()
            .map(|p| json!({"gamma": p.gamma(), "threshold": json_num(p.threshold_for_upper(1.0))}))
            .collect(),
    };
    write_json(
        &manifest,
        &json!({
            "command": "predict",
            "config_hash": stamp.hash,
            "seed": stamp.seed,
            "config": s.resolved(),
            "n_fit": folds.fit.len(),
            "n_calib": predictor.n_calib(),
            "n_test": table.len(),
            "thresholds": pac_thresholds,
        }),
    )
}
