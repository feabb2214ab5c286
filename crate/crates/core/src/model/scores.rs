use std::io::Read;
use std::path::Path;

use super::DEFAULT_THRESHOLD;
use crate::error::{Error, Result};
use crate::tabular::Dataset;

/// Scores produced by an external model for the rows of one dataset,
/// read from a `(row_index, score)` CSV.
///
/// The table only knows the rows it was given. It supports the audit and
/// the affected-set computation, but it cannot score a counterfactual.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    scores: Vec<f64>,
    rows: Vec<Vec<f64>>,
    threshold: f64,
}

impl ScoreTable {
    pub fn from_csv_reader<R: Read>(reader: R, ds: &Dataset) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut scores = vec![None; ds.len()];
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            let field = |i: usize, name: &str| -> Result<&str> {
                record.get(i).map(str::trim).ok_or_else(|| Error::Parse {
                    row: r,
                    column: name.into(),
                    message: "missing value".into(),
                })
            };
            let idx: usize = field(0, "row_index")?.parse().map_err(|_| Error::Parse {
                row: r,
                column: "row_index".into(),
                message: "not a row index".into(),
            })?;
            let score: f64 = field(1, "score")?.parse().map_err(|_| Error::Parse {
                row: r,
                column: "score".into(),
                message: "not numeric".into(),
            })?;
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::Parse {
                    row: r,
                    column: "score".into(),
                    message: format!("score {score} outside [0, 1]"),
                });
            }
            let slot = scores.get_mut(idx).ok_or_else(|| Error::Parse {
                row: r,
                column: "row_index".into(),
                message: format!("row {idx} does not exist in a dataset of {} rows", ds.len()),
            })?;
            if slot.replace(score).is_some() {
                return Err(Error::Parse {
                    row: r,
                    column: "row_index".into(),
                    message: format!("duplicate row {idx}"),
                });
            }
        }
        let scores = scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Schema(format!("no score for dataset row {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scores,
            rows: ds.normalized(),
            threshold: DEFAULT_THRESHOLD,
        })
    }

    pub fn load(path: impl AsRef<Path>, ds: &Dataset) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, ds)
    }

    pub fn score_row(&self, row: usize) -> f64 {
        self.scores[row]
    }

    pub fn predictions(&self) -> Vec<u8> {
        self.scores.iter().map(|&s| (s >= self.threshold) as u8).collect()
    }

    /// Score of an instance that must be one of the table's rows.
    pub fn score_instance(&self, x: &[f64]) -> Result<f64> {
        self.rows
            .iter()
            .position(|r| r.as_slice() == x)
            .map(|i| self.scores[i])
            .ok_or(Error::UnseenInstance)
    }
}
