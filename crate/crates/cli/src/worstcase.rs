use std::collections::BTreeMap;
use std::path::Path;

use clap::{Args, ValueEnum};
use robust_conformal::worstcase::{
    causal_witness, lp_oracle_marginal, worst_cdf_causal, worst_cdf_marginal,
    worst_witness_marginal, Atom, CausalGroup, CausalJoint, MarginalJoint,
};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{json_num, num, write_csv, write_json, Stamp};
use crate::settings::{parse_list, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Marginal,
    Causal,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Mode as ValueEnum>::from_str(s, false)
    }
}

/// Worst-case CDF of a discrete score law over its likelihood-ratio
/// identification set.
///
/// Marginal input columns: `score, mass, lower, upper`. Causal input
/// columns: `group, group_mass, shift, lower0, upper0, score, mass`, with
/// `mass` the conditional mass inside the group.
#[derive(Debug, Args)]
pub struct WorstcaseArgs {
    /// Atom CSV.
    #[arg(long)]
    pub atoms: Option<String>,
    /// marginal or causal [default: marginal]
    #[arg(long)]
    pub mode: Option<String>,
    /// Comma-separated evaluation points [default: the atom scores]
    #[arg(long)]
    pub t: Option<String>,
    /// Output CSV of the worst-case CDF.
    #[arg(long)]
    pub out: Option<String>,
    /// Output CSV of the worst-case likelihood ratio.
    #[arg(long)]
    pub witness: Option<String>,
    /// Run manifest; defaults to the output path with extension .json.
    #[arg(long)]
    pub manifest: Option<String>,
}

struct Table {
    rows: Vec<BTreeMap<String, f64>>,
}

fn read_numeric(path: &Path, required: &[&str]) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: row 1: {e}", path.display())))?
        .clone();
    for col in required {
        if !headers.iter().any(|h| h == *col) {
            return Err(CliError::Input(format!(
                "{}: row 1: missing column `{col}`",
                path.display()
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec =
            rec.map_err(|e| CliError::Input(format!("{}: row {row}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for col in required {
            let idx = headers
                .iter()
                .position(|h| h == *col)
                .expect("checked above");
            let raw = rec.get(idx).unwrap_or("");
            let v: f64 = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    CliError::Input(format!(
                        "{}: row {row}: column `{col}`: cannot parse {raw:?}",
                        path.display()
                    ))
                })?;
            map.insert(col.to_string(), v);
        }
        rows.push(map);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: no atoms", path.display())));
    }
    Ok(Table { rows })
}

fn marginal_joint(path: &Path) -> CliResult<MarginalJoint> {
    let table = read_numeric(path, &["score", "mass", "lower", "upper"])?;
    let atoms = table
        .rows
        .iter()
        .map(|r| Atom {
            score: r["score"],
            mass: r["mass"],
            lower: r["lower"],
            upper: r["upper"],
        })
        .collect();
    Ok(MarginalJoint::new(atoms)?)
}

fn causal_joint(path: &Path) -> CliResult<CausalJoint> {
    let table = read_numeric(
        path,
        &[
            "group",
            "group_mass",
            "shift",
            "lower0",
            "upper0",
            "score",
            "mass",
        ],
    )?;
    let mut groups: BTreeMap<i64, CausalGroup> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        let key = r["group"] as i64;
        let g = groups.entry(key).or_insert_with(|| CausalGroup {
            mass: r["group_mass"],
            shift: r["shift"],
            lower0: r["lower0"],
            upper0: r["upper0"],
            atoms: Vec::new(),
        });
        if (g.mass, g.shift, g.lower0, g.upper0)
            != (r["group_mass"], r["shift"], r["lower0"], r["upper0"])
        {
            return Err(CliError::Input(format!(
                "{}: row {}: group {key} has inconsistent group_mass, shift or bounds",
                path.display(),
                i + 2
            )));
        }
        g.atoms.push((r["score"], r["mass"]));
    }
    Ok(CausalJoint::new(groups.into_values().collect())?)
}

pub fn run(args: &WorstcaseArgs, s: &mut Settings) -> CliResult<()> {
    let atoms = s.input("atoms", &args.atoms)?;
    let out = s.required_output("out", &args.out)?;
    let witness_out = s.output("witness", &args.witness)?;
    let manifest = s
        .output("manifest", &args.manifest)?
        .unwrap_or_else(|| out.with_extension("json"));
    let mode: Mode = s.get("mode", &args.mode, "marginal")?;
    let ts: Option<String> = s.optional("t", &args.t)?;
    s.finish()?;
    let stamp = Stamp {
        hash: s.hash(),
        seed: 0,
    };

    let mut summary = json!({
        "command": "worstcase",
        "config_hash": stamp.hash,
        "seed": stamp.seed,
        "config": s.resolved(),
    });
    match mode {
        Mode::Marginal => {
            let d = marginal_joint(&atoms)?;
            let ts = match ts {
                Some(raw) => parse_list("t", &raw)?,
                None => d.grid(),
            };
            write_csv(
                &out,
                stamp.header(&["t", "worst_cdf", "lp_oracle"]),
                ts.iter().map(|&t| {
                    stamp.row(vec![
                        num(t),
                        num(worst_cdf_marginal(&d, t)),
                        num(lp_oracle_marginal(&d, t).0),
                    ])
                }),
            )?;
            let w = worst_witness_marginal(&d);
            if let Some(path) = witness_out {
                write_csv(
                    &path,
                    stamp.header(&["score", "mass", "lower", "upper", "w"]),
                    d.atoms().iter().zip(&w.w).map(|(a, w)| {
                        stamp.row(vec![
                            num(a.score),
                            num(a.mass),
                            num(a.lower),
                            num(a.upper),
                            num(*w),
                        ])
                    }),
                )?;
            }
            summary["t_star"] = json_num(w.t_star);
            summary["gamma"] = json_num(w.gamma);
        }
        Mode::Causal => {
            let d = causal_joint(&atoms)?;
            let ts = match ts {
                Some(raw) => parse_list("t", &raw)?,
                None => d.grid(),
            };
            let cdf: Vec<f64> = ts
                .iter()
                .map(|&t| worst_cdf_causal(&d, t))
                .collect::<Result<_, _>>()?;
            write_csv(
                &out,
                stamp.header(&["t", "worst_cdf"]),
                ts.iter()
                    .zip(&cdf)
                    .map(|(t, f)| stamp.row(vec![num(*t), num(*f)])),
            )?;
            let witness = causal_witness(&d)?;
            if let Some(path) = witness_out {
                let rows: Vec<Vec<String>> = d
                    .groups()
                    .iter()
                    .zip(&witness)
                    .enumerate()
                    .flat_map(|(k, (g, wg))| {
                        g.atoms.iter().zip(&wg.w).map(move |((score, mass), w)| {
                            vec![
                                k.to_string(),
                                num(*score),
                                num(*mass),
                                num(*w),
                                num(wg.tau),
                                num(wg.q),
                                num(wg.gamma0),
                            ]
                        })
                    })
                    .map(|r| stamp.row(r))
                    .collect();
                write_csv(
                    &path,
                    stamp.header(&["group", "score", "mass", "w", "tau", "q", "gamma0"]),
                    rows,
                )?;
            }
        }
    }
    write_json(&manifest, &summary)
}
