//! Per-window cluster labels and the binary anomaly mask derived from
//! them, shared by both clustering backends and the ground-truth
//! generator.
//!
//! On disk a `ClusterMap` is a CSV `wx,wy,wz,label,is_anomaly` using the
//! display convention anomaly = 1, normal = 0, artefacts = 2, 3, ...,
//! plus a small JSON sidecar holding the window grid dims.

use crate::io_error::{FileError, FileResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

/// Integer labels over the window grid plus the anomaly flag per label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    /// Window grid dimensions (windows per axis).
    pub grid_dims: [usize; 3],
    /// Window grid coordinates, sorted x-fastest.
    pub positions: Vec<[usize; 3]>,
    /// Cluster label per window (parallel to `positions`).
    pub labels: Vec<u32>,
    /// Labels flagged as anomaly.
    pub anomaly_labels: BTreeSet<u32>,
}

#[derive(Serialize, Deserialize)]
struct ClusterMapSidecar {
    grid_dims: [usize; 3],
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    wx: usize,
    wy: usize,
    wz: usize,
    label: u32,
    is_anomaly: u8,
}

impl ClusterMap {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// True iff the window at index `i` belongs to an anomaly-flagged
    /// cluster.
    pub fn is_anomaly(&self, i: usize) -> bool {
        self.anomaly_labels.contains(&self.labels[i])
    }

    pub fn anomaly_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.is_anomaly(i)).collect()
    }

    pub fn cluster_count(&self) -> usize {
        self.labels.iter().collect::<BTreeSet<_>>().len()
    }

    /// Population of each label, descending by count (ties by label).
    pub fn populations(&self) -> Vec<(u32, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        let mut pops: Vec<(u32, usize)> = counts.into_iter().collect();
        pops.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        pops
    }

    /// Remaps labels to the export convention: anomaly clusters -> 1,
    /// the largest non-anomaly cluster -> 0, remaining clusters -> 2,
    /// 3, ... in decreasing size ("artefacts").
    pub fn display_labels(&self) -> Vec<u32> {
        let pops = self.populations();
        let mut mapping = std::collections::BTreeMap::new();
        let mut next_artefact = 2u32;
        let mut normal_assigned = false;
        for (label, _) in &pops {
            if self.anomaly_labels.contains(label) {
                mapping.insert(*label, 1u32);
            } else if !normal_assigned {
                mapping.insert(*label, 0u32);
                normal_assigned = true;
            } else {
                mapping.insert(*label, next_artefact);
                next_artefact += 1;
            }
        }
        self.labels.iter().map(|l| mapping[l]).collect()
    }

    /// Writes `wx,wy,wz,label,is_anomaly` rows (display-label
    /// convention) plus the grid-dims sidecar.
    pub fn save_csv(&self, path: &Path) -> FileResult<()> {
        let display = self.display_labels();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for (i, pos) in self.positions.iter().enumerate() {
            w.serialize(LabelRecord {
                wx: pos[0],
                wy: pos[1],
                wz: pos[2],
                label: display[i],
                is_anomaly: u8::from(self.is_anomaly(i)),
            })
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| FileError::io(path, e))?;
        let sidecar = ClusterMapSidecar {
            grid_dims: self.grid_dims,
        };
        let sidecar_path = sidecar_path(path);
        fs::write(
            &sidecar_path,
            serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
        )
        .map_err(|e| FileError::io(&sidecar_path, e))?;
        Ok(())
    }

    /// Loads a label CSV. The sidecar is optional; without it the grid
    /// dims are inferred as max position + 1.
    pub fn load_csv(path: &Path) -> FileResult<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut positions = Vec::new();
        let mut labels = Vec::new();
        let mut anomaly_labels = BTreeSet::new();
        for (row, record) in reader.deserialize::<LabelRecord>().enumerate() {
            let r = record.map_err(|e| FileError::malformed(path, Some(row + 2), e.to_string()))?;
            positions.push([r.wx, r.wy, r.wz]);
            labels.push(r.label);
            if r.is_anomaly != 0 {
                anomaly_labels.insert(r.label);
            }
        }
        let sidecar = sidecar_path(path);
        let grid_dims = if sidecar.exists() {
            let text = fs::read_to_string(&sidecar).map_err(|e| FileError::io(&sidecar, e))?;
            serde_json::from_str::<ClusterMapSidecar>(&text)
                .map_err(|e| FileError::malformed(&sidecar, None, e.to_string()))?
                .grid_dims
        } else {
            let mut dims = [0usize; 3];
            for p in &positions {
                for k in 0..3 {
                    dims[k] = dims[k].max(p[k] + 1);
                }
            }
            dims
        };
        Ok(Self {
            grid_dims,
            positions,
            labels,
            anomaly_labels,
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".meta.json");
    path.with_file_name(name)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> FileError {
    let line = match e.kind() {
        csv::ErrorKind::Deserialize { pos, .. } => pos.as_ref().map(|p| p.line() as usize),
        _ => None,
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FileError::io(path, io),
        other => FileError::malformed(path, line, format!("{other:?}")),
    }
}
