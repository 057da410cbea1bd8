//! Canonical in-memory PU dataset: loading, encoding, normalization, folds.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column `{0}` not found in header")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("no positive rows")]
    NoPositives,
    #[error("no unlabeled rows")]
    NoUnlabeled,
    #[error("dataset needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("{what}: expected length {expected}, got {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("row {row} is labeled positive but its ground truth is negative")]
    TruthConflict { row: usize },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("column `{0}` is categorical; run encode_normalize first")]
    NotEncoded(String),
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("{count} {class} rows are too few for {k} folds")]
    TooFewForFolds {
        class: &'static str,
        count: usize,
        k: usize,
    },
    #[error("cannot build a PU split: {0}")]
    Split(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PuLabel {
    Positive,
    Unlabeled,
}

/// Latent class of a row. Never visible to estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Positive,
    Negative,
}

impl Truth {
    pub fn is_positive(self) -> bool {
        self == Truth::Positive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    /// 0/1 dummy column produced by encoding; left untouched by normalization.
    Indicator(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Numeric(v) | Column::Indicator(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Column::Categorical(_))
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Indicator(v) => Column::Indicator(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(v) => {
                Column::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        }
    }
}

/// Positive and unlabeled rows with column-wise features.
///
/// Invariants enforced by every constructor: at least two rows, at least one
/// positive and one unlabeled row, equal column lengths, finite numeric
/// values, and ground truth (when present) that agrees with positive labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PuDataset {
    columns: Vec<Column>,
    feature_names: Vec<String>,
    pu_label: Vec<PuLabel>,
    truth: Option<Vec<Truth>>,
}

impl PuDataset {
    pub fn new(
        columns: Vec<Column>,
        feature_names: Vec<String>,
        pu_label: Vec<PuLabel>,
        truth: Option<Vec<Truth>>,
    ) -> Result<Self, DataError> {
        let n = pu_label.len();
        if n < 2 {
            return Err(DataError::TooFewRows(n));
        }
        if !pu_label.contains(&PuLabel::Positive) {
            return Err(DataError::NoPositives);
        }
        if !pu_label.contains(&PuLabel::Unlabeled) {
            return Err(DataError::NoUnlabeled);
        }
        if feature_names.len() != columns.len() {
            return Err(DataError::LengthMismatch {
                what: "feature names",
                expected: columns.len(),
                found: feature_names.len(),
            });
        }
        for (col, name) in columns.iter().zip(&feature_names) {
            if col.len() != n {
                return Err(DataError::LengthMismatch {
                    what: "column",
                    expected: n,
                    found: col.len(),
                });
            }
            if let Column::Numeric(v) | Column::Indicator(v) = col {
                if let Some(row) = v.iter().position(|x| !x.is_finite()) {
                    return Err(DataError::NonFinite {
                        column: name.clone(),
                        row,
                    });
                }
            }
        }
        if let Some(t) = &truth {
            if t.len() != n {
                return Err(DataError::LengthMismatch {
                    what: "truth",
                    expected: n,
                    found: t.len(),
                });
            }
            if let Some(row) = (0..n)
                .find(|&i| pu_label[i] == PuLabel::Positive && t[i] == Truth::Negative)
            {
                return Err(DataError::TruthConflict { row });
            }
        }
        Ok(Self {
            columns,
            feature_names,
            pu_label,
            truth,
        })
    }

    /// Builds a dataset from a dense row-major feature matrix.
    pub fn from_matrix(
        features: &Array2<f64>,
        feature_names: Vec<String>,
        pu_label: Vec<PuLabel>,
        truth: Option<Vec<Truth>>,
    ) -> Result<Self, DataError> {
        let columns = features
            .columns()
            .into_iter()
            .map(|c| Column::Numeric(c.to_vec()))
            .collect();
        Self::new(columns, feature_names, pu_label, truth)
    }

    pub fn n_rows(&self) -> usize {
        self.pu_label.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn pu_labels(&self) -> &[PuLabel] {
        &self.pu_label
    }

    pub fn truth(&self) -> Option<&[Truth]> {
        self.truth.as_deref()
    }

    pub fn n_positive(&self) -> usize {
        self.pu_label
            .iter()
            .filter(|&&l| l == PuLabel::Positive)
            .count()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n_rows() - self.n_positive()
    }

    /// Row indices of unlabeled rows, in row order.
    pub fn unlabeled_rows(&self) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| self.pu_label[i] == PuLabel::Unlabeled)
            .collect()
    }

    /// Ground truth of the unlabeled rows, in row order.
    pub fn unlabeled_truth(&self) -> Option<Vec<Truth>> {
        let truth = self.truth.as_ref()?;
        Some(self.unlabeled_rows().into_iter().map(|i| truth[i]).collect())
    }

    pub fn is_encoded(&self) -> bool {
        !self.columns.iter().any(Column::is_categorical)
    }

    /// Dense `n × m` feature matrix. Fails while categorical columns remain.
    pub fn feature_matrix(&self) -> Result<Array2<f64>, DataError> {
        let n = self.n_rows();
        let m = self.n_features();
        let mut out = Array2::zeros((n, m));
        for (j, (col, name)) in self.columns.iter().zip(&self.feature_names).enumerate() {
            match col {
                Column::Numeric(v) | Column::Indicator(v) => {
                    for (i, &x) in v.iter().enumerate() {
                        out[[i, j]] = x;
                    }
                }
                Column::Categorical(_) => return Err(DataError::NotEncoded(name.clone())),
            }
        }
        Ok(out)
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, DataError> {
        Self::new(
            self.columns.iter().map(|c| c.select(rows)).collect(),
            self.feature_names.clone(),
            rows.iter().map(|&r| self.pu_label[r]).collect(),
            self.truth
                .as_ref()
                .map(|t| rows.iter().map(|&r| t[r]).collect()),
        )
    }
}

fn parse_numeric(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a headered CSV file. Rows whose label cell equals `positive_value`
/// become positive, every other row unlabeled. A column is categorical iff
/// some cell fails to parse as a finite number.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    positive_value: &str,
) -> Result<PuDataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let label_idx = header
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| DataError::MissingColumn(label_column.to_owned()))?;

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    let mut pu_label = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != header.len() {
            return Err(DataError::RaggedRow {
                line: record.position().map_or(0, |p| p.line()),
                expected: header.len(),
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                pu_label.push(if cell.trim() == positive_value {
                    PuLabel::Positive
                } else {
                    PuLabel::Unlabeled
                });
            } else {
                cells[j].push(cell.to_owned());
            }
        }
    }

    let mut columns = Vec::new();
    let mut names = Vec::new();
    for (j, col) in cells.into_iter().enumerate() {
        if j == label_idx {
            continue;
        }
        let parsed: Option<Vec<f64>> = col.iter().map(|c| parse_numeric(c)).collect();
        columns.push(match parsed {
            Some(values) => Column::Numeric(values),
            None => Column::Categorical(col),
        });
        names.push(header[j].trim().to_owned());
    }
    PuDataset::new(columns, names, pu_label, None)
}

/// Dummy-encodes categorical columns and z-scores numeric ones.
///
/// Means and population standard deviations are pooled over all rows.
/// Constant columns (and categoricals with a single level) are dropped.
pub fn encode_normalize(ds: &PuDataset) -> PuDataset {
    let mut columns = Vec::new();
    let mut names = Vec::new();
    for (col, name) in ds.columns.iter().zip(&ds.feature_names) {
        match col {
            Column::Numeric(v) => {
                let m = crate::stats::mean(v);
                let sd = crate::stats::population_variance(v).sqrt();
                if sd > 1e-12 * m.abs().max(1.0) {
                    columns.push(Column::Numeric(v.iter().map(|x| (x - m) / sd).collect()));
                    names.push(name.clone());
                }
            }
            Column::Indicator(v) => {
                if v.iter().any(|&x| x != v[0]) {
                    columns.push(col.clone());
                    names.push(name.clone());
                }
            }
            Column::Categorical(v) => {
                let levels: BTreeSet<&str> = v.iter().map(String::as_str).collect();
                if levels.len() < 2 {
                    continue;
                }
                for level in levels {
                    columns.push(Column::Indicator(
                        v.iter()
                            .map(|c| if c == level { 1.0 } else { 0.0 })
                            .collect(),
                    ));
                    names.push(format!("{name}={level}"));
                }
            }
        }
    }
    PuDataset {
        columns,
        feature_names: names,
        pu_label: ds.pu_label.clone(),
        truth: ds.truth.clone(),
    }
}

/// Fold index of every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of_row: Vec<usize>,
    pub k: usize,
}

impl FoldAssignment {
    /// `(train, test)` row indices for one fold, each in ascending order.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.fold_of_row.len()).partition(|&i| self.fold_of_row[i] != fold)
    }
}

/// Stratified k-fold assignment, deterministic given `seed`.
///
/// Each class is shuffled independently and dealt round-robin; the unlabeled
/// deal continues where the positive one stopped so fold sizes differ by at
/// most one row.
pub fn split_folds(ds: &PuDataset, k: usize, seed: u64) -> Result<FoldAssignment, DataError> {
    if k < 2 {
        return Err(DataError::InvalidFoldCount(k));
    }
    let (mut pos, mut unl): (Vec<usize>, Vec<usize>) =
        (0..ds.n_rows()).partition(|&i| ds.pu_label[i] == PuLabel::Positive);
    if pos.len() < k {
        return Err(DataError::TooFewForFolds {
            class: "positive",
            count: pos.len(),
            k,
        });
    }
    if unl.len() < k {
        return Err(DataError::TooFewForFolds {
            class: "unlabeled",
            count: unl.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    unl.shuffle(&mut rng);
    let mut fold_of_row = vec![0; ds.n_rows()];
    for (j, &row) in pos.iter().chain(unl.iter()).enumerate() {
        fold_of_row[row] = j % k;
    }
    Ok(FoldAssignment { fold_of_row, k })
}

/// Turns a fully labeled dataset into a PU benchmark split.
///
/// Rows currently labeled positive are treated as ground-truth positives and
/// the rest as negatives. `n_p` positives are drawn as the labeled sample;
/// the unlabeled sample is the largest one whose positive share is `alpha`
/// given the remaining rows (sizes floored).
pub fn pu_benchmark_split(
    ds: &PuDataset,
    n_p: usize,
    alpha: f64,
    seed: u64,
) -> Result<PuDataset, DataError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DataError::Split(format!("alpha {alpha} outside [0, 1]")));
    }
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..ds.n_rows()).partition(|&i| ds.pu_label[i] == PuLabel::Positive);
    if pos.len() <= n_p {
        return Err(DataError::Split(format!(
            "{} positive rows cannot supply {n_p} labeled positives plus a mixture",
            pos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let spare_pos = (pos.len() - n_p) as f64;
    let spare_neg = neg.len() as f64;
    let by_pos = if alpha > 0.0 {
        spare_pos / alpha
    } else {
        f64::INFINITY
    };
    let by_neg = if alpha < 1.0 {
        spare_neg / (1.0 - alpha)
    } else {
        f64::INFINITY
    };
    let n_u = by_pos.min(by_neg).floor() as usize;
    let n_u_pos = ((alpha * n_u as f64).round() as usize).min(pos.len() - n_p);
    let n_u_neg = (n_u - n_u_pos).min(neg.len());
    if n_u_pos + n_u_neg == 0 {
        return Err(DataError::NoUnlabeled);
    }

    let mut rows = Vec::with_capacity(n_p + n_u_pos + n_u_neg);
    let mut pu_label = Vec::with_capacity(rows.capacity());
    let mut truth = Vec::with_capacity(rows.capacity());
    for &r in &pos[..n_p] {
        rows.push(r);
        pu_label.push(PuLabel::Positive);
        truth.push(Truth::Positive);
    }
    for &r in &pos[n_p..n_p + n_u_pos] {
        rows.push(r);
        pu_label.push(PuLabel::Unlabeled);
        truth.push(Truth::Positive);
    }
    for &r in &neg[..n_u_neg] {
        rows.push(r);
        pu_label.push(PuLabel::Unlabeled);
        truth.push(Truth::Negative);
    }
    PuDataset::new(
        ds.columns.iter().map(|c| c.select(&rows)).collect(),
        ds.feature_names.clone(),
        pu_label,
        Some(truth),
    )
}
