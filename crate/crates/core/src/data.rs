//! Labeled source and unlabeled target datasets.
//!
//! Class labels are 1-based at the API boundary (`[1..c]`) and 0-based
//! internally. Non-finite coordinates are rejected at construction, so the
//! numeric code downstream never re-validates rows.

use crate::error::{DfmError, Result};

/// Labeled points: an n×d row-major matrix plus a class label per row.
#[derive(Debug, Clone)]
pub struct SourceDataset {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    labels0: Vec<usize>,
    classes: usize,
}

impl SourceDataset {
    /// `labels` are 1-based and every class in `[1..classes]` must occur.
    pub fn new(data: Vec<f64>, rows: usize, dim: usize, labels: &[usize], classes: usize) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(DfmError::Parameter("source dataset must be non-empty".into()));
        }
        if classes == 0 {
            return Err(DfmError::Parameter("class count must be positive".into()));
        }
        if data.len() != rows * dim {
            return Err(DfmError::DimensionMismatch {
                context: "source points",
                left: data.len(),
                right: rows * dim,
            });
        }
        if labels.len() != rows {
            return Err(DfmError::DimensionMismatch {
                context: "source labels",
                left: labels.len(),
                right: rows,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DfmError::NonFinite("source points"));
        }
        let mut counts = vec![0usize; classes];
        let mut labels0 = Vec::with_capacity(rows);
        for &l in labels {
            if l < 1 || l > classes {
                return Err(DfmError::Parameter(format!(
                    "label {l} outside [1..{classes}]"
                )));
            }
            counts[l - 1] += 1;
            labels0.push(l - 1);
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(DfmError::Parameter(format!(
                "class {} has no source rows",
                empty + 1
            )));
        }
        Ok(SourceDataset {
            data,
            rows,
            dim,
            labels0,
            classes,
        })
    }

    pub fn n(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    /// 1-based label of a row.
    pub fn label(&self, row: usize) -> usize {
        self.labels0[row] + 1
    }

    pub(crate) fn class_index(&self, row: usize) -> usize {
        self.labels0[row]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.data
    }

    /// n_i for i in [1..c].
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for &l in &self.labels0 {
            counts[l] += 1;
        }
        counts
    }

    /// Empirical source proportions β̃_i = n_i / n.
    pub fn beta_tilde(&self) -> Vec<f64> {
        let n = self.rows as f64;
        self.class_counts().iter().map(|&c| c as f64 / n).collect()
    }
}

/// Unlabeled points: an m×d row-major matrix.
#[derive(Debug, Clone)]
pub struct TargetDataset {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
}

impl TargetDataset {
    pub fn new(data: Vec<f64>, rows: usize, dim: usize) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(DfmError::Parameter("target dataset must be non-empty".into()));
        }
        if data.len() != rows * dim {
            return Err(DfmError::DimensionMismatch {
                context: "target points",
                left: data.len(),
                right: rows * dim,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DfmError::NonFinite("target points"));
        }
        Ok(TargetDataset { data, rows, dim })
    }

    pub fn m(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.data
    }
}

/// A contiguous block of points, all of one class.
#[derive(Debug, Clone)]
pub struct PointBlock {
    pub data: Vec<f64>,
    pub rows: usize,
    pub dim: usize,
}

impl PointBlock {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Partition the source rows by class, preserving the original row order
/// inside each block.
pub fn split_by_class(src: &SourceDataset) -> Vec<PointBlock> {
    let mut blocks: Vec<PointBlock> = src
        .class_counts()
        .iter()
        .map(|&count| PointBlock {
            data: Vec::with_capacity(count * src.dim()),
            rows: count,
            dim: src.dim(),
        })
        .collect();
    for r in 0..src.n() {
        blocks[src.class_index(r)].data.extend_from_slice(src.row(r));
    }
    blocks
}
