//! Datasets, synthetic generation, CSV interchange and minibatch sampling.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::metrics::Label;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::usage("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Feature matrix with `{+1, -1}` labels and the sorted list of positive rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<Label>,
    pos_idx: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<Label>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::usage(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(k) = labels.iter().position(|&y| y != 1 && y != -1) {
            return Err(Error::usage(format!("label {} at row {k}", labels[k])));
        }
        if let Some(k) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!(
                "feature at row {}",
                k / features.cols().max(1)
            )));
        }
        let pos_idx = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == 1)
            .map(|(i, _)| i)
            .collect();
        Ok(Dataset {
            features,
            labels,
            pos_idx,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.labels[i] == 1
    }

    pub fn positives(&self) -> &[usize] {
        &self.pos_idx
    }

    pub fn n_pos(&self) -> usize {
        self.pos_idx.len()
    }

    /// Errors unless the dataset has at least one positive.
    pub fn require_positive(&self, what: &str) -> Result<()> {
        if self.pos_idx.is_empty() {
            Err(Error::usage(format!("{what} needs at least one positive")))
        } else {
            Ok(())
        }
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.features.select_rows(idx), labels)
            .expect("subset of a valid dataset is valid")
    }

    /// The dataset repeated `times` times, rows in blocks.
    pub fn replicate(&self, times: usize) -> Dataset {
        let idx: Vec<usize> = (0..times).flat_map(|_| 0..self.len()).collect();
        self.subset(&idx)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for k in 0..self.dim() {
            let _ = write!(out, "f{k},");
        }
        out.push_str("label\n");
        for i in 0..self.len() {
            for v in self.features.row(i) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", self.labels[i]);
        }
        out
    }

    /// Writes the CSV form: header `f0,...,f{d-1},label`, shortest
    /// round-trip float formatting, labels as `1`/`-1`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    /// Parses the CSV form. Labels `0` and `-1` both map to the negative class.
    pub fn parse_csv(text: &str, path: &Path) -> Result<Dataset> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::usage(format!("{}: empty file", path.display())))?;
        let columns: Vec<&str> = header.split(',').map(str::trim).collect();
        if columns.last() != Some(&"label") {
            return Err(parse_err(1, "last header column must be `label`".into()));
        }
        let dim = columns.len() - 1;

        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (k, line) in lines {
            let lineno = k + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(parse_err(
                    lineno,
                    format!("expected {} fields, found {}", dim + 1, fields.len()),
                ));
            }
            for f in &fields[..dim] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad number `{f}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, format!("non-finite feature `{f}`")));
                }
                values.push(v);
            }
            let raw = fields[dim];
            let label = match raw.parse::<f64>() {
                Ok(1.0) => 1,
                Ok(v) if v == 0.0 || v == -1.0 => -1,
                _ => {
                    return Err(parse_err(
                        lineno,
                        format!("label `{raw}` not in {{-1,0,1}}"),
                    ))
                }
            };
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(Error::usage(format!("{}: no data rows", path.display())));
        }
        Dataset::new(Matrix::new(labels.len(), dim, values)?, labels)
    }
}

/// Two isotropic Gaussian classes, positives centred at `+sep/2 * 1` and
/// negatives at `-sep/2 * 1`, with exactly `round(n * ratio)` positives at
/// shuffled positions.
pub fn gen_gaussians(n: usize, d: usize, ratio: f64, sep: f64, seed: u64) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::usage(format!(
            "ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if d == 0 || !sep.is_finite() {
        return Err(Error::usage(
            "dimension must be positive and separation finite",
        ));
    }
    let n_pos = (n as f64 * ratio).round() as usize;
    if n_pos == 0 {
        return Err(Error::usage(format!(
            "n={n}, ratio={ratio} yields no positives"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Label> = (0..n).map(|i| if i < n_pos { 1 } else { -1 }).collect();
    labels.shuffle(&mut rng);
    let mut values = Vec::with_capacity(n * d);
    for &y in &labels {
        let centre = f64::from(y) * sep / 2.0;
        for _ in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            values.push(centre + z);
        }
    }
    Dataset::new(Matrix::new(n, d, values)?, labels)
}

/// Keeps `round(n+ * keep)` positives chosen uniformly plus every negative,
/// preserving row order.
pub fn subsample_positives(data: &Dataset, keep: f64, seed: u64) -> Result<Dataset> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::usage(format!("keep must lie in (0, 1], got {keep}")));
    }
    let n_keep = (data.n_pos() as f64 * keep).round() as usize;
    if n_keep == 0 {
        return Err(Error::usage(format!(
            "keeping {keep} of {} positives leaves none",
            data.n_pos()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep_mask = vec![false; data.len()];
    for k in index::sample(&mut rng, data.n_pos(), n_keep) {
        keep_mask[data.positives()[k]] = true;
    }
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| !data.is_positive(i) || keep_mask[i])
        .collect();
    Ok(data.subset(&idx))
}

/// Splits positives and negatives independently by `fractions`.
///
/// Every split receives `round(count * fraction)` rows of each class, the
/// last split taking the remainder. Fails if any split ends up without a
/// positive.
pub fn stratified_split(data: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::usage("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::usage(format!(
            "split fractions sum to {total}, not 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = data.positives().to_vec();
    let mut neg: Vec<usize> = (0..data.len()).filter(|&i| !data.is_positive(i)).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let cut = |items: &[usize]| -> Vec<Vec<usize>> {
        let mut parts = Vec::with_capacity(fractions.len());
        let mut start = 0;
        for (k, f) in fractions.iter().enumerate() {
            let end = if k + 1 == fractions.len() {
                items.len()
            } else {
                (start + (items.len() as f64 * f).round() as usize).min(items.len())
            };
            parts.push(items[start..end].to_vec());
            start = end;
        }
        parts
    };
    let pos_parts = cut(&pos);
    let neg_parts = cut(&neg);

    let mut out = Vec::with_capacity(fractions.len());
    for (k, (p, n)) in pos_parts.into_iter().zip(neg_parts).enumerate() {
        if p.is_empty() {
            return Err(Error::usage(format!(
                "split {k} receives no positives ({} available)",
                data.n_pos()
            )));
        }
        let mut idx = [p, n].concat();
        idx.sort_unstable();
        out.push(data.subset(&idx));
    }
    Ok(out)
}

/// One SOAP minibatch: sampled positives and general samples, as row indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub positives: Vec<usize>,
    pub all: Vec<usize>,
}

/// Endless stream of minibatches drawn uniformly with replacement.
///
/// By default the positive draw and the general draw are independent. In
/// nested mode the general batch is the positive draw followed by
/// `batch - batch_pos` uniform samples.
#[derive(Debug, Clone)]
pub struct StratifiedSampler {
    rng: ChaCha8Rng,
    positives: Vec<usize>,
    n: usize,
    batch_pos: usize,
    batch: usize,
    nested: bool,
}

impl StratifiedSampler {
    pub fn new(data: &Dataset, batch_pos: usize, batch: usize, seed: u64) -> Result<Self> {
        if batch_pos == 0 || batch == 0 {
            return Err(Error::usage("batch sizes must be at least 1"));
        }
        data.require_positive("stratified sampling")?;
        Ok(StratifiedSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            positives: data.positives().to_vec(),
            n: data.len(),
            batch_pos,
            batch,
            nested: false,
        })
    }

    pub fn nested(mut self, nested: bool) -> Result<Self> {
        if nested && self.batch < self.batch_pos {
            return Err(Error::usage("nested batches need batch >= batch_pos"));
        }
        self.nested = nested;
        Ok(self)
    }

    pub fn next_batch(&mut self) -> Batch {
        let positives: Vec<usize> = (0..self.batch_pos)
            .map(|_| self.positives[self.rng.random_range(0..self.positives.len())])
            .collect();
        let all = if self.nested {
            let mut all = positives.clone();
            all.extend((self.batch_pos..self.batch).map(|_| self.rng.random_range(0..self.n)));
            all
        } else {
            (0..self.batch)
                .map(|_| self.rng.random_range(0..self.n))
                .collect()
        };
        Batch { positives, all }
    }

    /// Draws `batch` general samples only, for decomposable-loss training.
    pub fn next_uniform(&mut self) -> Vec<usize> {
        (0..self.batch)
            .map(|_| self.rng.random_range(0..self.n))
            .collect()
    }
}

impl Iterator for StratifiedSampler {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}
