//! CSV readers for datasets and prediction files.
//!
//! Dialect: comma-separated, UTF-8, '.' decimal, mandatory header row. The
//! label column is named exactly `label`; in a source file it must be the
//! final column. Arbitrary integer label values are mapped onto [1..c] in
//! ascending order and the originals are kept for reporting.

use crate::data::{SourceDataset, TargetDataset};
use crate::error::{DfmError, Result};
use std::path::Path;

/// A parsed labeled dataset plus the original label value per class index.
#[derive(Debug, Clone)]
pub struct LabeledCsv {
    pub dataset: SourceDataset,
    /// Original label value of class i+1 at index i.
    pub class_labels: Vec<i64>,
    pub feature_names: Vec<String>,
}

/// A parsed target dataset; `labels` is present when the file carried a
/// `label` column (ignored for estimation, kept for scoring workflows).
#[derive(Debug, Clone)]
pub struct TargetCsv {
    pub dataset: TargetDataset,
    pub labels: Option<Vec<i64>>,
    pub feature_names: Vec<String>,
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)
        .map_err(|e| DfmError::Malformed(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_float(field: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| DfmError::Malformed(format!("row {row}: '{field}' in column {col} is not a number")))?;
    if !v.is_finite() {
        return Err(DfmError::Malformed(format!(
            "row {row}: non-finite value in column {col}"
        )));
    }
    Ok(v)
}

fn parse_label(field: &str, row: usize) -> Result<i64> {
    field
        .parse()
        .map_err(|_| DfmError::Malformed(format!("row {row}: '{field}' is not an integer label")))
}

/// Read a labeled source file: feature columns followed by a final integer
/// `label` column.
pub fn read_source_csv(path: &Path) -> Result<LabeledCsv> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(DfmError::from)?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.len() < 2 {
        return Err(DfmError::Malformed(
            "source csv needs at least one feature column and a label column".into(),
        ));
    }
    let label_idx = headers.len() - 1;
    if headers[label_idx] != "label" {
        return Err(DfmError::Malformed(format!(
            "source csv must end with a 'label' column, found '{}'",
            headers[label_idx]
        )));
    }
    if headers[..label_idx].iter().any(|h| h == "label") {
        return Err(DfmError::Malformed(
            "source csv has a 'label' column that is not last".into(),
        ));
    }
    let dim = label_idx;
    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(DfmError::from)?;
        if record.len() != headers.len() {
            return Err(DfmError::Malformed(format!(
                "row {}: expected {} fields, found {}",
                i + 1,
                headers.len(),
                record.len()
            )));
        }
        for (k, field) in record.iter().take(dim).enumerate() {
            data.push(parse_float(field, i + 1, &headers[k])?);
        }
        raw_labels.push(parse_label(&record[label_idx], i + 1)?);
    }
    if raw_labels.is_empty() {
        return Err(DfmError::Malformed("source csv has no data rows".into()));
    }
    let mut class_labels: Vec<i64> = raw_labels.clone();
    class_labels.sort_unstable();
    class_labels.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| class_labels.binary_search(l).expect("label present") + 1)
        .collect();
    let rows = labels.len();
    Ok(LabeledCsv {
        dataset: SourceDataset::new(data, rows, dim, &labels, class_labels.len())?,
        class_labels,
        feature_names: headers[..dim].to_vec(),
    })
}

/// Read a target file: feature columns only. A `label` column, if present
/// (any position), is stripped out and returned separately.
pub fn read_target_csv(path: &Path) -> Result<TargetCsv> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(DfmError::from)?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let label_idx = headers.iter().position(|h| h == "label");
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&k| Some(k) != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(DfmError::Malformed("target csv has no feature columns".into()));
    }
    let dim = feature_cols.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(DfmError::from)?;
        if record.len() != headers.len() {
            return Err(DfmError::Malformed(format!(
                "row {}: expected {} fields, found {}",
                i + 1,
                headers.len(),
                record.len()
            )));
        }
        for &k in &feature_cols {
            data.push(parse_float(&record[k], i + 1, &headers[k])?);
        }
        if let Some(li) = label_idx {
            labels.push(parse_label(&record[li], i + 1)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DfmError::Malformed("target csv has no data rows".into()));
    }
    Ok(TargetCsv {
        dataset: TargetDataset::new(data, rows, dim)?,
        labels: label_idx.map(|_| labels),
        feature_names: feature_cols.iter().map(|&k| headers[k].clone()).collect(),
    })
}

/// Read a single-column prediction file of integer labels, row-aligned with
/// its dataset file, and map the values through the source's class labels.
pub fn read_predictions_csv(
    path: &Path,
    class_labels: &[i64],
    expected_rows: usize,
) -> Result<Vec<usize>> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(DfmError::from)?.clone();
    if headers.len() != 1 {
        return Err(DfmError::Malformed(format!(
            "{}: prediction csv must have exactly one column, found {}",
            path.display(),
            headers.len()
        )));
    }
    let mut preds = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(DfmError::from)?;
        let raw = parse_label(&record[0], i + 1)?;
        let class = class_labels.binary_search(&raw).map_err(|_| {
            DfmError::Malformed(format!(
                "row {}: predicted label {raw} does not occur in the source",
                i + 1
            ))
        })?;
        preds.push(class + 1);
    }
    if preds.len() != expected_rows {
        return Err(DfmError::Malformed(format!(
            "{}: expected {expected_rows} predictions, found {}",
            path.display(),
            preds.len()
        )));
    }
    Ok(preds)
}
