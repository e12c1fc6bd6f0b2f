//! Scoring of predicted cluster maps against ground truth: binary
//! anomaly misclassification after optimal label matching, per-class
//! precision/recall, and the raw multi-cluster Rand index.

use crate::cluster::ClusterMap;
use crate::io_error::{FileError, FileResult};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("window grids differ: prediction has {pred} windows on {pred_dims:?}, truth {truth} on {truth_dims:?}")]
    GridMismatch {
        pred: usize,
        truth: usize,
        pred_dims: [usize; 3],
        truth_dims: [usize; 3],
    },
}

/// Binary confusion counts (anomaly = positive class) after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_anomaly: usize,
    pub false_anomaly: usize,
    pub false_normal: usize,
    pub true_normal: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_anomaly + self.false_anomaly + self.false_normal + self.true_normal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Binary error rate under the better of the two label matchings.
    pub misclassification: f64,
    pub precision_anomaly: f64,
    pub recall_anomaly: f64,
    pub precision_normal: f64,
    pub recall_normal: f64,
    /// Rand index over the raw (multi-cluster) labels.
    pub rand_index: f64,
    /// Number of clusters in the prediction.
    pub cluster_count: usize,
    pub confusion: Confusion,
    pub evaluated_windows: usize,
    /// True when the anomaly/normal roles were swapped by matching.
    pub swapped: bool,
}

impl EvaluationReport {
    pub fn save_json(&self, path: &Path) -> FileResult<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("report serializes"),
        )
        .map_err(|e| FileError::io(path, e))
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Compares two cluster maps over the same window grid.
///
/// The binary anomaly masks are compared both directly and with the
/// roles swapped, keeping whichever matching yields the lower error
/// (cluster identities are arbitrary). The Rand index uses the raw
/// labels of both maps.
pub fn evaluate(pred: &ClusterMap, truth: &ClusterMap) -> Result<EvaluationReport, EvalError> {
    if pred.grid_dims != truth.grid_dims || pred.positions != truth.positions {
        return Err(EvalError::GridMismatch {
            pred: pred.len(),
            truth: truth.len(),
            pred_dims: pred.grid_dims,
            truth_dims: truth.grid_dims,
        });
    }
    let n = pred.len();
    let pred_mask = pred.anomaly_mask();
    let truth_mask = truth.anomaly_mask();
    let direct = pred_mask
        .iter()
        .zip(&truth_mask)
        .filter(|(a, b)| a != b)
        .count();
    let swapped = direct > n - direct;
    let effective: Vec<bool> = if swapped {
        pred_mask.iter().map(|&a| !a).collect()
    } else {
        pred_mask
    };

    let mut confusion = Confusion {
        true_anomaly: 0,
        false_anomaly: 0,
        false_normal: 0,
        true_normal: 0,
    };
    for (&p, &t) in effective.iter().zip(&truth_mask) {
        match (p, t) {
            (true, true) => confusion.true_anomaly += 1,
            (true, false) => confusion.false_anomaly += 1,
            (false, true) => confusion.false_normal += 1,
            (false, false) => confusion.true_normal += 1,
        }
    }
    debug_assert_eq!(confusion.total(), n);

    Ok(EvaluationReport {
        misclassification: (confusion.false_anomaly + confusion.false_normal) as f64 / n as f64,
        precision_anomaly: ratio(
            confusion.true_anomaly,
            confusion.true_anomaly + confusion.false_anomaly,
        ),
        recall_anomaly: ratio(
            confusion.true_anomaly,
            confusion.true_anomaly + confusion.false_normal,
        ),
        precision_normal: ratio(
            confusion.true_normal,
            confusion.true_normal + confusion.false_normal,
        ),
        recall_normal: ratio(
            confusion.true_normal,
            confusion.true_normal + confusion.false_anomaly,
        ),
        rand_index: rand_index(&pred.labels, &truth.labels),
        cluster_count: pred.cluster_count(),
        confusion,
        evaluated_windows: n,
        swapped,
    })
}

/// Rand index between two labelings via the contingency table.
pub fn rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut cells = std::collections::HashMap::new();
    let mut rows = std::collections::HashMap::new();
    let mut cols = std::collections::HashMap::new();
    for (&la, &lb) in a.iter().zip(b) {
        *cells.entry((la, lb)).or_insert(0u64) += 1;
        *rows.entry(la).or_insert(0u64) += 1;
        *cols.entry(lb).or_insert(0u64) += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) / 2;
    let sum_cells: u64 = cells.values().map(|&c| choose2(c)).sum();
    let sum_rows: u64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: u64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n as u64);
    // Agreements: pairs together in both plus pairs apart in both.
    let agreements = total + 2 * sum_cells - sum_rows - sum_cols;
    agreements as f64 / total as f64
}

impl ClusterMap {
    /// Restriction of this map to a subset of window positions (for
    /// comparing full-grid ground truth against predictions that
    /// skipped sparse windows). `None` if a position is missing.
    pub fn restrict_to(&self, positions: &[[usize; 3]]) -> Option<ClusterMap> {
        let index: std::collections::HashMap<[usize; 3], usize> = self
            .positions
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i))
            .collect();
        let mut labels = Vec::with_capacity(positions.len());
        for p in positions {
            labels.push(self.labels[*index.get(p)?]);
        }
        Some(ClusterMap {
            grid_dims: self.grid_dims,
            positions: positions.to_vec(),
            labels,
            anomaly_labels: self.anomaly_labels.clone(),
        })
    }
}
