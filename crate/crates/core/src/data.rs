//! Samples, datasets, random splits and CSV ingestion.

use std::io::Read;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One observed unit.
///
/// `y` is the outcome under the received treatment. `y1`/`y0` are only
/// populated by the simulator, for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub t: u8,
    pub y: f64,
    pub y1: Option<f64>,
    pub y0: Option<f64>,
}

impl Sample {
    pub fn new(x: Vec<f64>, t: u8, y: f64) -> Self {
        Self {
            x,
            t,
            y,
            y1: None,
            y0: None,
        }
    }

    pub fn with_potential_outcomes(x: Vec<f64>, t: u8, y1: f64, y0: f64) -> Self {
        let y = if t == 1 { y1 } else { y0 };
        Self {
            x,
            t,
            y,
            y1: Some(y1),
            y0: Some(y0),
        }
    }

    pub fn treated(&self) -> bool {
        self.t == 1
    }

    fn validate(&self) -> Result<()> {
        if self.t > 1 {
            return Err(Error::InvalidSample(format!(
                "treatment must be 0 or 1, got {}",
                self.t
            )));
        }
        if let (Some(y1), Some(y0)) = (self.y1, self.y0) {
            let expected = if self.t == 1 { y1 } else { y0 };
            if expected != self.y {
                return Err(Error::InvalidSample(
                    "observed outcome disagrees with the potential outcome of the received arm"
                        .into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    p: usize,
}

impl Dataset {
    /// Builds a dataset, checking that every sample has the same covariate
    /// dimension. An empty sample list is allowed only through
    /// [`Dataset::empty`], since the dimension cannot be inferred.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let p = first.x.len();
        Self::with_dimension(samples, p)
    }

    pub fn with_dimension(samples: Vec<Sample>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidSample(
                "covariate dimension must be at least 1".into(),
            ));
        }
        for s in &samples {
            if s.x.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: s.x.len(),
                });
            }
            s.validate()?;
        }
        Ok(Self { samples, p })
    }

    pub fn empty(p: usize) -> Self {
        Self {
            samples: Vec::new(),
            p,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Units that received treatment `t`.
    pub fn arm(&self, t: u8) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| s.t == t).cloned().collect(),
            p: self.p,
        }
    }

    /// Fraction of treated units.
    pub fn treated_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return f64::NAN;
        }
        self.samples.iter().filter(|s| s.treated()).count() as f64 / self.samples.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            p: self.p,
        }
    }

    /// Reads a dataset with columns `x1..xp`, `t`, `y` and optional `y1`, `y0`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let table = read_table(reader, true)?;
        Self::with_dimension(table.to_samples()?, table_dim(&table)?)
    }

    pub fn from_csv_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::Csv {
            row: 0,
            message: format!("{}: {e}", path.as_ref().display()),
        })?;
        Self::from_csv_reader(file)
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Rows of a CSV whose treatment/outcome columns may be absent (test files
/// for prediction only carry covariates).
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub x: Vec<Vec<f64>>,
    pub t: Vec<Option<u8>>,
    pub y: Vec<Option<f64>>,
    pub y1: Vec<Option<f64>>,
    pub y0: Vec<Option<f64>>,
}

impl CsvTable {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn to_samples(&self) -> Result<Vec<Sample>> {
        (0..self.len())
            .map(|i| {
                let row = i + 2;
                let t = self.t[i].ok_or(Error::Csv {
                    row,
                    message: "missing `t`".into(),
                })?;
                let y = self.y[i].ok_or(Error::Csv {
                    row,
                    message: "missing `y`".into(),
                })?;
                let s = Sample {
                    x: self.x[i].clone(),
                    t,
                    y,
                    y1: self.y1[i],
                    y0: self.y0[i],
                };
                s.validate().map_err(|e| Error::Csv {
                    row,
                    message: e.to_string(),
                })?;
                Ok(s)
            })
            .collect()
    }
}

fn table_dim(table: &CsvTable) -> Result<usize> {
    table.x.first().map(|x| x.len()).ok_or(Error::EmptyDataset)
}

/// Parses a covariate CSV. With `require_outcomes`, the `t` and `y` columns
/// must be present. Row numbers in errors are 1-based file lines (the
/// header is line 1).
pub fn read_table<R: Read>(reader: R, require_outcomes: bool) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv {
            row: 1,
            message: e.to_string(),
        })?
        .clone();

    let mut x_cols: Vec<(usize, usize)> = Vec::new();
    let (mut t_col, mut y_col, mut y1_col, mut y0_col) = (None, None, None, None);
    for (i, h) in headers.iter().enumerate() {
        match h {
            "t" => t_col = Some(i),
            "y" => y_col = Some(i),
            "y1" => y1_col = Some(i),
            "y0" => y0_col = Some(i),
            _ => {
                if let Some(k) = h.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                    if k >= 1 {
                        x_cols.push((k, i));
                    }
                }
            }
        }
    }
    x_cols.sort_unstable();
    if x_cols.is_empty() {
        return Err(Error::Csv {
            row: 1,
            message: "no covariate columns x1..xp".into(),
        });
    }
    for (expect, (k, _)) in (1..).zip(&x_cols) {
        if *k != expect {
            return Err(Error::Csv {
                row: 1,
                message: format!("covariate column x{expect} missing"),
            });
        }
    }
    if require_outcomes && (t_col.is_none() || y_col.is_none()) {
        return Err(Error::Csv {
            row: 1,
            message: "columns `t` and `y` are required".into(),
        });
    }

    let mut table = CsvTable {
        x: vec![],
        t: vec![],
        y: vec![],
        y1: vec![],
        y0: vec![],
    };
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Csv {
            row,
            message: e.to_string(),
        })?;
        let float = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Csv {
                row,
                message: format!("column `{name}`: cannot parse {raw:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Csv {
                    row,
                    message: format!("column `{name}`: non-finite value"),
                });
            }
            Ok(v)
        };
        let optional = |col: Option<usize>, name: &str| -> Result<Option<f64>> {
            match col {
                Some(c) if !record.get(c).unwrap_or("").is_empty() => float(c, name).map(Some),
                _ => Ok(None),
            }
        };
        let x = x_cols
            .iter()
            .map(|&(k, c)| float(c, &format!("x{k}")))
            .collect::<Result<Vec<_>>>()?;
        let t = match t_col {
            Some(c) if !record.get(c).unwrap_or("").is_empty() => match record.get(c).unwrap_or("")
            {
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(Error::Csv {
                        row,
                        message: format!("column `t`: expected 0 or 1, got {other:?}"),
                    })
                }
            },
            _ => None,
        };
        table.x.push(x);
        table.t.push(t);
        table.y.push(optional(y_col, "y")?);
        table.y1.push(optional(y1_col, "y1")?);
        table.y0.push(optional(y0_col, "y0")?);
    }
    Ok(table)
}

/// Random train/calibration split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Partitions `dataset` into (train, calibration) folds of sizes
/// `floor(n * f)` and the remainder. Both folds keep the input order.
pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0,1), got {f}"
        )));
    }
    let (train_idx, calib_idx) = split_indices(n, spec)?;
    Ok((dataset.subset(&train_idx), dataset.subset(&calib_idx)))
}

/// Index form of [`split`].
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = (n as f64 * spec.train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::EmptyFold {
            n,
            fraction: spec.train_fraction,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::seeded(spec.seed));
    let mut train = perm[..n_train].to_vec();
    let mut calib = perm[n_train..].to_vec();
    train.sort_unstable();
    calib.sort_unstable();
    Ok((train, calib))
}

/// Miscoverage `alpha` and, for PAC procedures, confidence `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub alpha: f64,
    pub delta: f64,
}

impl Level {
    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        check_unit_open("alpha", alpha)?;
        check_unit_open("delta", delta)?;
        Ok(Self { alpha, delta })
    }
}

pub(crate) fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(format!(
            "{name} must lie in (0,1), got {v}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample::new(vec![i as f64], (i % 2) as u8, i as f64))
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn split_sizes_and_partition() {
        let d = toy(10);
        let spec = SplitSpec {
            train_fraction: 0.5,
            seed: 1,
        };
        let (a, b) = split(&d, spec).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let mut all: Vec<f64> = a.samples().iter().chain(b.samples()).map(|s| s.y).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic() {
        let spec = SplitSpec {
            train_fraction: 0.3,
            seed: 77,
        };
        assert_eq!(
            split_indices(50, spec).unwrap(),
            split_indices(50, spec).unwrap()
        );
        let other = SplitSpec { seed: 78, ..spec };
        assert_ne!(
            split_indices(50, spec).unwrap(),
            split_indices(50, other).unwrap()
        );
    }

    #[test]
    fn single_sample_split_rejected() {
        let err = split(
            &toy(1),
            SplitSpec {
                train_fraction: 0.5,
                seed: 1,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyFold { .. }));
        assert!(err.to_string().starts_with("empty-fold"));
    }

    #[test]
    fn empty_dataset_rejected() {
        let err = split(
            &Dataset::empty(2),
            SplitSpec {
                train_fraction: 0.5,
                seed: 1,
            },
        )
        .unwrap_err();
        assert_eq!(err, Error::EmptyDataset);
        assert!(err.to_string().starts_with("empty-dataset"));
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let s = vec![
            Sample::new(vec![0.0], 0, 0.0),
            Sample::new(vec![0.0, 1.0], 1, 0.0),
        ];
        assert!(matches!(
            Dataset::new(s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn potential_outcomes_must_match_observed() {
        let mut s = Sample::with_potential_outcomes(vec![0.0], 1, 2.0, 1.0);
        assert_eq!(s.y, 2.0);
        s.y = 1.0;
        assert!(Dataset::new(vec![s]).is_err());
    }

    #[test]
    fn csv_roundtrip_and_row_errors() {
        let text = "x1,x2,t,y\n0.1,0.2,1,3.5\n0.3,0.4,0,-1\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.samples()[1].t, 0);

        let bad = "x1,t,y\n0.1,1,3\n0.2,2,1\n";
        match Dataset::from_csv_reader(bad.as_bytes()).unwrap_err() {
            Error::Csv { row, message } => {
                assert_eq!(row, 3);
                assert!(message.contains("`t`"));
            }
            e => panic!("unexpected {e:?}"),
        }

        let bad_float = "x1,t,y\nabc,1,3\n";
        assert!(matches!(
            Dataset::from_csv_reader(bad_float.as_bytes()),
            Err(Error::Csv { row: 2, .. })
        ));
    }

    #[test]
    fn csv_with_potential_outcomes() {
        let text = "x1,t,y,y1,y0\n0.5,1,2,2,1\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.samples()[0].y0, Some(1.0));
    }

    #[test]
    fn level_bounds() {
        assert!(Level::new(0.1, 0.05).is_ok());
        assert!(Level::new(0.0, 0.05).is_err());
        assert!(Level::new(0.1, 1.0).is_err());
    }
}
