//! Per-iteration training logs shared by every training method.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::average_precision;
use crate::model::ScoreModel;
use crate::objective::objective_from_scores;
use crate::surrogate::SurrogateSpec;

pub const CURVE_HEADER: &str = "iter,objective,train_ap,val_ap,grad_norm,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iter: usize,
    /// `-P(w)` on the training set, the surrogate counterpart of AP.
    pub objective: f64,
    pub train_ap: f64,
    pub val_ap: Option<f64>,
    /// L2 norm of the update direction at this iteration.
    pub grad_norm: f64,
    pub wall_ms: u64,
}

impl RunRecord {
    pub fn csv_row(&self) -> String {
        let val = self.val_ap.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.objective, self.train_ap, val, self.grad_norm, self.wall_ms
        )
    }

    pub fn parse_row(line: &str) -> Option<RunRecord> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return None;
        }
        Some(RunRecord {
            iter: f[0].parse().ok()?,
            objective: f[1].parse().ok()?,
            train_ap: f[2].parse().ok()?,
            val_ap: if f[3].is_empty() {
                None
            } else {
                Some(f[3].parse().ok()?)
            },
            grad_norm: f[4].parse().ok()?,
            wall_ms: f[5].parse().ok()?,
        })
    }
}

/// Reads a curve CSV written by [`CurveWriter`].
pub fn read_curve(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CURVE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("expected header `{CURVE_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            RunRecord::parse_row(l).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                msg: "malformed record".into(),
            })
        })
        .collect()
}

/// Appends records to a curve CSV, flushing after every row so that an
/// aborted run leaves everything logged so far on disk.
pub struct CurveWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CurveWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = CurveWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.write_line(CURVE_HEADER)?;
        Ok(w)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<()> {
        self.write_line(&record.csv_row())
    }
}

/// Evaluation context for building records during a run.
pub(crate) struct Evaluator<'a> {
    pub train: &'a Dataset,
    pub val: Option<&'a Dataset>,
    pub surrogate: SurrogateSpec,
    pub start: Instant,
}

impl Evaluator<'_> {
    pub fn record(&self, iter: usize, model: &ScoreModel, grad_norm: f64) -> Result<RunRecord> {
        let scores = model.forward(self.train.features())?;
        let objective = -objective_from_scores(&self.surrogate, &scores, self.train)?;
        let train_ap = average_precision(&scores, self.train.labels())?;
        let val_ap = match self.val {
            Some(v) => Some(average_precision(
                &model.forward(v.features())?,
                v.labels(),
            )?),
            None => None,
        };
        Ok(RunRecord {
            iter,
            objective,
            train_ap,
            val_ap,
            grad_norm,
            wall_ms: self.start.elapsed().as_millis() as u64,
        })
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_round_trip() {
        let r = RunRecord {
            iter: 10,
            objective: 0.25,
            train_ap: 0.5,
            val_ap: None,
            grad_norm: 1e-3,
            wall_ms: 7,
        };
        assert_eq!(r.csv_row(), "10,0.25,0.5,,0.001,7");
        assert_eq!(RunRecord::parse_row(&r.csv_row()), Some(r.clone()));
        let r2 = RunRecord {
            val_ap: Some(0.75),
            ..r
        };
        assert_eq!(RunRecord::parse_row(&r2.csv_row()), Some(r2));
        assert_eq!(RunRecord::parse_row("1,2,3"), None);
    }

    #[test]
    fn writer_flushes_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let mut w = CurveWriter::create(&path).unwrap();
        let r = RunRecord {
            iter: 1,
            objective: 0.1,
            train_ap: 0.2,
            val_ap: Some(0.3),
            grad_norm: 0.4,
            wall_ms: 0,
        };
        w.append(&r).unwrap();
        // Readable before the writer is dropped.
        assert_eq!(read_curve(&path).unwrap(), vec![r]);
    }
}
