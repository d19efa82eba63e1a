use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robust_conformal::nuisance::{
    bound_functions, fit_propensity, Counterfactual, Population, TargetSpec,
};
use robust_conformal::rng;
use robust_conformal::simulate::{Dgp, Effect};
use robust_conformal::{split, CounterfactualPredictor, ScoreFn, ScoreKind, SplitSpec};
use tempfile::TempDir;

fn rcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcp"))
        .args(args)
        .env_remove("RCP_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_units(path: &Path, n: usize, seed: u64, with_outcome: bool) {
    let dgp = Dgp::new(2, 1.5, Effect::Fixed(1.0)).unwrap();
    let units = dgp.draw(n, &mut rng::seeded(seed));
    let mut text = String::from(if with_outcome {
        "x1,x2,t,y\n"
    } else {
        "x1,x2\n"
    });
    for u in &units {
        if with_outcome {
            text += &format!("{},{},{},{}\n", u.x[0], u.x[1], u.t, u.y());
        } else {
            text += &format!("{},{}\n", u.x[0], u.x[1]);
        }
    }
    fs::write(path, text).unwrap();
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        write_units(&dir.path().join("train.csv"), 600, 1, true);
        write_units(&dir.path().join("test.csv"), 25, 2, false);
        write_units(&dir.path().join("units.csv"), 40, 3, true);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn read(&self, name: &str) -> Vec<Vec<String>> {
        let mut rdr = csv::Reader::from_path(self.path(name)).unwrap();
        let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
        std::iter::once(header)
            .chain(
                rdr.records()
                    .map(|r| r.unwrap().iter().map(String::from).collect()),
            )
            .collect()
    }
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let idx = rows[0]
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[idx].clone()).collect()
}

#[test]
fn predict_matches_split_conformal_when_weights_are_one() {
    let f = Fixture::new();
    let o = rcp(&[
        "predict",
        "--train",
        &f.p("train.csv"),
        "--test",
        &f.p("test.csv"),
        "--out",
        &f.p("out.csv"),
        "--counterfactual",
        "y1",
        "--population",
        "att",
        "--alpha",
        "0.2",
        "--seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    // Reference: plain split conformal on the treated calibration units.
    let data = robust_conformal::Dataset::from_csv_path(f.path("train.csv")).unwrap();
    let (fit, calib) = split(
        &data,
        SplitSpec {
            train_fraction: 0.5,
            seed: 9,
        },
    )
    .unwrap();
    let score = ScoreFn::fit(ScoreKind::CqrTwoSided, 0.2, &fit.arm(1)).unwrap();
    let mut scores: Vec<f64> = calib
        .arm(1)
        .samples()
        .iter()
        .map(|s| score.score(&s.x, s.y))
        .collect();
    scores.sort_by(f64::total_cmp);
    let k = (0.8 * (scores.len() as f64 + 1.0)).ceil() as usize;
    let reference = scores[k - 1];

    let rows = f.read("out.csv");
    assert_eq!(rows.len(), 26);
    for th in column(&rows, "threshold_g1") {
        assert_eq!(th.parse::<f64>().unwrap(), reference);
    }

    // Same pipeline through the library, with the propensity fit unused at gamma = 1.
    let spec = TargetSpec::new(Counterfactual::Y1, Population::Att).unwrap();
    let bounds = bound_functions(
        &spec,
        1.0,
        std::sync::Arc::new(fit_propensity(&fit).unwrap()),
        fit.treated_fraction(),
    )
    .unwrap();
    let predictor = CounterfactualPredictor::from_dataset(score, bounds, &calib).unwrap();
    let fitted = predictor
        .at_gamma(1.0, 0.2, &robust_conformal::Procedure::Marginal)
        .unwrap();
    assert_eq!(fitted.threshold(&[0.5, 0.5]), reference);
}

#[test]
fn one_column_group_per_gamma_and_nested_intervals() {
    let f = Fixture::new();
    let base = [
        "predict",
        "--train",
        &f.p("train.csv"),
        "--test",
        &f.p("test.csv"),
    ];
    let o = rcp(&[&base[..], &["--out", &f.p("one.csv"), "--gamma", "1.5"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let header = &f.read("one.csv")[0];
    assert_eq!(
        header
            .iter()
            .filter(|h| h.starts_with("lo_") || h.starts_with("hi_"))
            .count(),
        2
    );
    assert!(header.ends_with(&["config_hash".to_string(), "seed".to_string()]));

    let o = rcp(&[
        &base[..],
        &[
            "--out",
            &f.p("many.csv"),
            "--gamma",
            "1,1.5,2",
            "--method",
            "alg2:wsr",
        ],
    ]
    .concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = f.read("many.csv");
    let width = |g: &str| -> Vec<f64> {
        let lo = column(&rows, &format!("lo_g{g}"));
        let hi = column(&rows, &format!("hi_g{g}"));
        lo.iter()
            .zip(&hi)
            .map(|(l, h)| {
                h.parse::<f64>().unwrap_or(f64::INFINITY)
                    - l.parse::<f64>().unwrap_or(f64::NEG_INFINITY)
            })
            .collect()
    };
    let (w1, w15, w2) = (width("1"), width("1.5"), width("2"));
    for i in 0..w1.len() {
        assert!(w1[i] <= w15[i] && w15[i] <= w2[i]);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("many.json")).unwrap()).unwrap();
    assert_eq!(manifest["thresholds"].as_array().unwrap().len(), 3);
}

#[test]
fn infinite_endpoints_are_empty_cells_with_flags() {
    let f = Fixture::new();
    let o = rcp(&[
        "predict",
        "--train",
        &f.p("train.csv"),
        "--test",
        &f.p("test.csv"),
        "--out",
        &f.p("out.csv"),
        "--alpha",
        "0.001",
        "--gamma",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = f.read("out.csv");
    assert!(column(&rows, "lo_g3").iter().all(String::is_empty));
    assert!(column(&rows, "unbounded_lo_g3").iter().all(|v| v == "true"));
    assert!(column(&rows, "unbounded_hi_g3").iter().all(|v| v == "true"));
}

#[test]
fn malformed_treatment_is_an_input_error_naming_the_row() {
    let f = Fixture::new();
    let mut text = fs::read_to_string(f.path("train.csv")).unwrap();
    text += "0.5,0.5,2,1.0\n";
    fs::write(f.path("bad.csv"), &text).unwrap();
    let o = rcp(&[
        "predict",
        "--train",
        &f.p("bad.csv"),
        "--test",
        &f.p("test.csv"),
        "--out",
        &f.p("o.csv"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 602"), "{}", stderr(&o));

    let o = rcp(&[
        "predict",
        "--train",
        &f.p("missing.csv"),
        "--test",
        &f.p("test.csv"),
        "--out",
        &f.p("o.csv"),
    ]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(f.path("wide.csv"), "x1,x2,x3\n0.1,0.2,0.3\n").unwrap();
    let o = rcp(&[
        "predict",
        "--train",
        &f.p("train.csv"),
        "--test",
        &f.p("wide.csv"),
        "--out",
        &f.p("o.csv"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_three() {
    let f = Fixture::new();
    let base = [
        "predict",
        "--train",
        &f.p("train.csv"),
        "--test",
        &f.p("test.csv"),
        "--out",
        &f.p("o.csv"),
    ];
    for extra in [
        &["--alpha", "1.5"][..],
        &["--gamma", "0.5"],
        &["--method", "alg3"],
        &["--gamma", "2,1"],
    ] {
        let o = rcp(&[&base[..], extra].concat());
        assert_eq!(o.status.code(), Some(3), "{extra:?}: {}", stderr(&o));
    }
    assert_eq!(rcp(&["predict", "--bogus"]).status.code(), Some(3));
    assert_eq!(rcp(&["--threads", "0", "worstcase"]).status.code(), Some(3));
}

#[test]
fn flags_override_config_file() {
    let f = Fixture::new();
    fs::write(
        f.path("run.conf"),
        format!(
            "# predict run\nalpha = 0.5\ntrain = {}\ngamma=1.2\n",
            f.p("train.csv")
        ),
    )
    .unwrap();
    let o = rcp(&[
        "--config",
        &f.p("run.conf"),
        "predict",
        "--test",
        &f.p("test.csv"),
        "--out",
        &f.p("o.csv"),
        "--alpha",
        "0.2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("o.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["alpha"], "0.2");
    assert_eq!(manifest["config"]["gamma"], "1.2");
    assert_eq!(manifest["config"]["delta"], "0.05");

    fs::write(f.path("bad.conf"), "alpha = 0.2\ncolour = blue\n").unwrap();
    let o = rcp(&[
        "--config",
        &f.p("bad.conf"),
        "predict",
        "--train",
        &f.p("train.csv"),
        "--test",
        &f.p("test.csv"),
        "--out",
        &f.p("o.csv"),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("colour"));
}

fn write_treated(path: &Path, y: f64) {
    let mut text = String::from("x1,x2,t,y\n");
    for i in 0..10 {
        let v = 0.05 + 0.09 * f64::from(i);
        text += &format!("{v},{},1,{y}\n", 1.0 - v);
    }
    fs::write(path, text).unwrap();
}

#[test]
fn sensitivity_extremes() {
    let f = Fixture::new();
    let run = |units: &str, out: &str| {
        rcp(&[
            "sensitivity",
            "--train",
            &f.p("train.csv"),
            "--test",
            &f.p(units),
            "--out",
            &f.p(out),
            "--grid",
            "0.5:3",
        ])
    };
    write_treated(&f.path("low.csv"), -100.0);
    let o = run("low.csv", "low_out.csv");
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = f.read("low_out.csv");
    assert!(column(&rows, "gamma_value").iter().all(|v| v == "1"));
    assert!(column(&rows, "rejected_any").iter().all(|v| v == "false"));
    let surv = f.read("low_out.survival.csv");
    assert!(column(&surv, "survival").iter().all(|v| v == "0"));
    assert_eq!(column(&surv, "gamma"), ["1", "1.5", "2", "2.5", "3"]);

    write_treated(&f.path("high.csv"), 100.0);
    assert!(run("high.csv", "high_out.csv").status.success());
    let rows = f.read("high_out.csv");
    assert!(column(&rows, "censored").iter().all(|v| v == "true"));
    assert!(column(&rows, "gamma_value").iter().all(|v| v == "3"));

    let o = run("units.csv", "mixed.csv");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(f.read("mixed.csv").len(), 41);
}

#[test]
fn simulate_is_reproducible() {
    let f = Fixture::new();
    let args = |dir: &str, study: &str| -> Vec<String> {
        let mut v: Vec<String> = [
            "simulate",
            "--study",
            study,
            "--n-train",
            "200",
            "--n-calib",
            "100",
            "--n-test",
            "50",
            "--replicates",
            "4",
            "--seed",
            "3",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        v.extend(["--out-dir".to_string(), f.p(dir)]);
        if study == "coverage" {
            v.extend(
                [
                    "--n-gap",
                    "50",
                    "--alphas",
                    "0.2,0.5",
                    "--procedures",
                    "alg1,alg2:wsr",
                ]
                .map(String::from),
            );
        } else {
            v.extend(["--grid", "0.5:3"].map(String::from));
        }
        v
    };
    for study in ["coverage", "sensitivity"] {
        let a = args(&format!("{study}_a"), study);
        let b = args(&format!("{study}_b"), study);
        let oa = rcp(&a.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(oa.status.success(), "{}", stderr(&oa));
        let ob = Command::new(env!("CARGO_BIN_EXE_rcp"))
            .args(&b)
            .env("RCP_THREADS", "1")
            .output()
            .unwrap();
        assert!(ob.status.success(), "{}", stderr(&ob));
        for file in ["report.json", "summary.csv", "records.csv"] {
            let x = fs::read(f.path(&format!("{study}_a")).join(file)).unwrap();
            let y = fs::read(f.path(&format!("{study}_b")).join(file)).unwrap();
            assert_eq!(x, y, "{study}/{file}");
        }
    }
    let o = rcp(&[
        "simulate",
        "--study",
        "sensitivity",
        "--out-dir",
        &f.p("x"),
        "--alphas",
        "0.1",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn worstcase_two_atoms() {
    let f = Fixture::new();
    fs::write(
        f.path("atoms.csv"),
        "score,mass,lower,upper\n1,0.5,0.5,2\n2,0.5,0.5,2\n",
    )
    .unwrap();
    let o = rcp(&[
        "worstcase",
        "--atoms",
        &f.p("atoms.csv"),
        "--out",
        &f.p("cdf.csv"),
        "--witness",
        &f.p("w.csv"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = f.read("cdf.csv");
    assert_eq!(column(&rows, "worst_cdf"), ["0.25", "1"]);
    assert_eq!(column(&rows, "worst_cdf"), column(&rows, "lp_oracle"));
    let w: Vec<f64> = column(&f.read("w.csv"), "w")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 1.5).abs() < 1e-12);

    fs::write(
        f.path("causal.csv"),
        "group,group_mass,shift,lower0,upper0,score,mass\n0,1,1,0.5,2,1,0.3333333333333333\n0,1,1,0.5,2,2,0.3333333333333333\n0,1,1,0.5,2,3,0.3333333333333334\n",
    )
    .unwrap();
    let o = rcp(&[
        "worstcase",
        "--mode",
        "causal",
        "--atoms",
        &f.p("causal.csv"),
        "--out",
        &f.p("c.csv"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cdf: Vec<f64> = column(&f.read("c.csv"), "worst_cdf")
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    for (a, b) in cdf.iter().zip([1.0 / 6.0, 1.0 / 3.0, 1.0]) {
        assert!((a - b).abs() < 1e-12);
    }

    fs::write(
        f.path("infeasible.csv"),
        "score,mass,lower,upper\n1,1,2,3\n",
    )
    .unwrap();
    let o = rcp(&[
        "worstcase",
        "--atoms",
        &f.p("infeasible.csv"),
        "--out",
        &f.p("i.csv"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
