use std::fs::File;
use std::path::Path;

use serde_json::Value;

use crate::error::CliResult;

/// Config hash and seed appended to every row.
#[derive(Debug, Clone)]
pub struct Stamp {
    pub hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn header(&self, cols: &[&str]) -> Vec<String> {
        cols.iter()
            .map(|c| c.to_string())
            .chain(["config_hash".into(), "seed".into()])
            .collect()
    }

    pub fn row(&self, mut cells: Vec<String>) -> Vec<String> {
        cells.push(self.hash.clone());
        cells.push(self.seed.to_string());
        cells
    }
}

/// Finite values in shortest round-trip form; infinities and NaN as an
/// empty cell.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// A possibly infinite value as `(cell, unbounded flag)`.
pub fn endpoint(v: f64) -> [String; 2] {
    [num(v), v.is_infinite().to_string()]
}

pub fn write_csv(
    path: &Path,
    header: Vec<String>,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut file = File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    std::io::Write::write_all(&mut file, b"\n")?;
    Ok(())
}

/// JSON has no infinity literal: non-finite numbers become `null`.
pub fn json_num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}
