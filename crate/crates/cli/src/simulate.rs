use std::path::Path;

use clap::{Args, ValueEnum};
use robust_conformal::simulate::{
    run_coverage_experiment, run_sensitivity_experiment, BoundsSource, Effect, ProcedureSpec,
    SensitivityConfig, SimConfig,
};
use robust_conformal::{EnvelopeMethod, ScoreKind};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::output::{num, write_csv, write_json, Stamp};
use crate::pipeline::parse_grid;
use crate::settings::{parse_list, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Coverage,
    Sensitivity,
}

impl std::str::FromStr for Study {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Study as ValueEnum>::from_str(s, false)
    }
}

/// Simulation studies on the confounded synthetic design. Writes
/// `report.json` and CSV tables into the output directory.
#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// coverage or sensitivity [default: coverage]
    #[arg(long)]
    pub study: Option<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out_dir: Option<String>,
    /// Training units, both arms [default: 2000]
    #[arg(long)]
    pub n_train: Option<String>,
    /// Calibration units of the predicted arm [coverage default: 500, sensitivity default: 2000]
    #[arg(long)]
    pub n_calib: Option<String>,
    /// Test units per replicate [coverage default: 100, sensitivity default: 1000]
    #[arg(long)]
    pub n_test: Option<String>,
    /// Units used to evaluate coverage gaps (coverage only) [default: 1000]
    #[arg(long)]
    pub n_gap: Option<String>,
    /// Covariate dimension [default: 4]
    #[arg(long)]
    pub p: Option<String>,
    /// True confounding level [default: 1.5]
    #[arg(long)]
    pub gamma: Option<String>,
    /// Confounding level the bounds are built at (coverage only) [default: gamma]
    #[arg(long)]
    pub gamma_bounds: Option<String>,
    /// Comma-separated miscoverage levels (coverage only) [default: 0.1,...,0.9]
    #[arg(long)]
    pub alphas: Option<String>,
    /// Miscoverage level (sensitivity only) [default: 0.1]
    #[arg(long)]
    pub alpha: Option<String>,
    /// Calibration failure probability [default: 0.05]
    #[arg(long)]
    pub delta: Option<String>,
    /// fixed:a or random:a [default: fixed:0]
    #[arg(long)]
    pub effect: Option<String>,
    /// y1 or y0 (coverage only) [default: y1]
    #[arg(long)]
    pub counterfactual: Option<String>,
    /// ate, att or atc (coverage only) [default: ate]
    #[arg(long)]
    pub population: Option<String>,
    /// Score kind (coverage only) [default: cqr_two_sided]
    #[arg(long)]
    pub score: Option<String>,
    /// oracle or estimated [coverage default: oracle, sensitivity default: estimated]
    #[arg(long)]
    pub bounds: Option<String>,
    /// Comma-separated procedures (coverage only) [default: alg1]
    #[arg(long)]
    pub procedures: Option<String>,
    /// Envelope for alg2: plugin, hoeffding or wsr (sensitivity only) [default: wsr]
    #[arg(long)]
    pub envelope: Option<String>,
    /// Gamma grid (sensitivity only): default, STEP:MAX or a list [default: default]
    #[arg(long)]
    pub grid: Option<String>,
    /// Monte Carlo replicates [default: 100]
    #[arg(long)]
    pub replicates: Option<String>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<String>,
}

pub fn run(args: &SimulateArgs, s: &mut Settings) -> CliResult<()> {
    let dir = s.required_output("out-dir", &args.out_dir)?;
    let study: Study = s.get("study", &args.study, "coverage")?;
    match study {
        Study::Coverage => coverage(args, s, &dir),
        Study::Sensitivity => sensitivity(args, s, &dir),
    }
}

fn prepare(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", dir.display())))
}

fn coverage(args: &SimulateArgs, s: &mut Settings, dir: &Path) -> CliResult<()> {
    let d = SimConfig::default();
    let alphas_raw: String = s.get(
        "alphas",
        &args.alphas,
        "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
    )?;
    let procs_raw: String = s.get("procedures", &args.procedures, "alg1")?;
    let cfg = SimConfig {
        n_train: s.get("n-train", &args.n_train, &d.n_train.to_string())?,
        n_calib: s.get("n-calib", &args.n_calib, &d.n_calib.to_string())?,
        n_test: s.get("n-test", &args.n_test, &d.n_test.to_string())?,
        n_gap: s.get("n-gap", &args.n_gap, &d.n_gap.to_string())?,
        p: s.get("p", &args.p, &d.p.to_string())?,
        gamma_true: s.get("gamma", &args.gamma, &d.gamma_true.to_string())?,
        gamma_bounds: s.optional("gamma-bounds", &args.gamma_bounds)?,
        alphas: parse_list("alphas", &alphas_raw)?,
        delta: s.get("delta", &args.delta, &d.delta.to_string())?,
        effect: s.get::<Effect>("effect", &args.effect, "fixed:0")?,
        counterfactual: s.get("counterfactual", &args.counterfactual, "y1")?,
        population: s.get("population", &args.population, "ate")?,
        score: s.get::<ScoreKind>("score", &args.score, "cqr_two_sided")?,
        bounds: s.get::<BoundsSource>("bounds", &args.bounds, "oracle")?,
        procedures: parse_list::<ProcedureSpec>("procedures", &procs_raw)?,
        replicates: s.get("replicates", &args.replicates, &d.replicates.to_string())?,
        seed: s.get("seed", &args.seed, "0")?,
    };
    reject_unused(
        s,
        &[
            ("alpha", &args.alpha),
            ("envelope", &args.envelope),
            ("grid", &args.grid),
        ],
    )?;
    s.finish()?;
    let report = run_coverage_experiment(&cfg)?;
    prepare(dir)?;
    let stamp = Stamp {
        hash: s.hash(),
        seed: cfg.seed,
    };

    write_csv(
        &dir.join("summary.csv"),
        stamp.header(&[
            "procedure",
            "alpha",
            "mean_coverage",
            "sd_coverage",
            "mc_se",
            "coverage_quantile",
            "infinite_fraction",
            "replicates",
        ]),
        report.summaries.iter().map(|r| {
            stamp.row(vec![
                r.procedure.to_string(),
                num(r.alpha),
                num(r.mean_coverage),
                num(r.sd_coverage),
                num(r.mc_se),
                num(r.coverage_quantile),
                num(r.infinite_fraction),
                r.replicates.to_string(),
            ])
        }),
    )?;
    write_csv(
        &dir.join("records.csv"),
        stamp.header(&[
            "replicate",
            "procedure",
            "alpha",
            "coverage",
            "infinite_fraction",
            "threshold",
            "unbounded_threshold",
        ]),
        report.records.iter().map(|r| {
            let th = r.threshold.unwrap_or(f64::NAN);
            stamp.row(vec![
                r.replicate.to_string(),
                r.procedure.to_string(),
                num(r.alpha),
                num(r.coverage),
                num(r.infinite_fraction),
                num(th),
                th.is_infinite().to_string(),
            ])
        }),
    )?;
    write_csv(
        &dir.join("gaps.csv"),
        stamp.header(&[
            "replicate",
            "marginal_sup",
            "marginal_mean",
            "pac",
            "l1_lower",
            "l1_upper",
        ]),
        report.gap_records.iter().map(|r| {
            stamp.row(vec![
                r.replicate.to_string(),
                num(r.marginal_sup),
                num(r.marginal_mean),
                num(r.pac),
                num(r.l1_lower),
                num(r.l1_upper),
            ])
        }),
    )?;
    write_report(dir, s, &stamp, serde_json::to_value(&report)?)
}

fn sensitivity(args: &SimulateArgs, s: &mut Settings, dir: &Path) -> CliResult<()> {
    let d = SensitivityConfig::default();
    let grid_raw: String = s.get("grid", &args.grid, "default")?;
    let cfg = SensitivityConfig {
        n_train: s.get("n-train", &args.n_train, &d.n_train.to_string())?,
        n_calib: s.get("n-calib", &args.n_calib, &d.n_calib.to_string())?,
        n_test: s.get("n-test", &args.n_test, &d.n_test.to_string())?,
        p: s.get("p", &args.p, &d.p.to_string())?,
        gamma_true: s.get("gamma", &args.gamma, &d.gamma_true.to_string())?,
        alpha: s.get("alpha", &args.alpha, &d.alpha.to_string())?,
        delta: s.get("delta", &args.delta, &d.delta.to_string())?,
        effect: s.get::<Effect>("effect", &args.effect, "fixed:0")?,
        grid: parse_grid("grid", &grid_raw)?,
        bounds: s.get::<BoundsSource>("bounds", &args.bounds, "estimated")?,
        method: s.get::<EnvelopeMethod>("envelope", &args.envelope, "wsr")?,
        replicates: s.get("replicates", &args.replicates, &d.replicates.to_string())?,
        seed: s.get("seed", &args.seed, "0")?,
    };
    reject_unused(
        s,
        &[
            ("n-gap", &args.n_gap),
            ("gamma-bounds", &args.gamma_bounds),
            ("alphas", &args.alphas),
            ("counterfactual", &args.counterfactual),
            ("population", &args.population),
            ("score", &args.score),
            ("procedures", &args.procedures),
        ],
    )?;
    s.finish()?;
    let report = run_sensitivity_experiment(&cfg)?;
    prepare(dir)?;
    let stamp = Stamp {
        hash: s.hash(),
        seed: cfg.seed,
    };

    write_csv(
        &dir.join("summary.csv"),
        stamp.header(&[
            "procedure",
            "mean_fwer",
            "sd_fwer",
            "fwer_quantile",
            "mean_above_gamma_true",
            "max_fdp",
            "mean_censored_fraction",
        ]),
        report.summaries.iter().map(|r| {
            stamp.row(vec![
                r.procedure.to_string(),
                num(r.mean_fwer),
                num(r.sd_fwer),
                num(r.fwer_quantile),
                num(r.mean_above_gamma_true),
                num(r.max_fdp),
                num(r.mean_censored_fraction),
            ])
        }),
    )?;
    let curve_rows: Vec<Vec<String>> = report
        .summaries
        .iter()
        .flat_map(|r| {
            cfg.grid.values().iter().enumerate().map(|(g, gamma)| {
                stamp.row(vec![
                    r.procedure.to_string(),
                    num(*gamma),
                    num(r.mean_survival[g]),
                    num(r.mean_fdp[g]),
                ])
            })
        })
        .collect();
    write_csv(
        &dir.join("curves.csv"),
        stamp.header(&["procedure", "gamma", "mean_survival", "mean_fdp"]),
        curve_rows,
    )?;
    write_csv(
        &dir.join("records.csv"),
        stamp.header(&[
            "replicate",
            "procedure",
            "fwer",
            "n_true_null",
            "above_gamma_true",
            "censored_fraction",
        ]),
        report.records.iter().map(|r| {
            stamp.row(vec![
                r.replicate.to_string(),
                r.procedure.to_string(),
                num(r.fwer),
                r.n_true_null.to_string(),
                num(r.above_gamma_true),
                num(r.censored_fraction),
            ])
        }),
    )?;
    write_report(dir, s, &stamp, serde_json::to_value(&report)?)
}

/// Settings that belong to the other study are configuration mistakes.
fn reject_unused(s: &mut Settings, keys: &[(&str, &Option<String>)]) -> CliResult<()> {
    for (key, flag) in keys {
        if s.optional::<String>(key, flag)?.is_some() {
            return Err(CliError::Config(format!(
                "'{key}' does not apply to this study"
            )));
        }
    }
    Ok(())
}

fn write_report(dir: &Path, s: &Settings, stamp: &Stamp, report: Value) -> CliResult<()> {
    write_json(
        &dir.join("report.json"),
        &json!({
            "config_hash": stamp.hash,
            "seed": stamp.seed,
            "config": s.resolved(),
            "report": report,
        }),
    )
}
