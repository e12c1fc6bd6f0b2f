//! ASCII legacy VTK structured-points export of window grids (labels
//! or features), loadable by standard volume viewers, plus a reader
//! for the same subset used in round-trip checks.

use crate::cluster::ClusterMap;
use crate::features::{AttributeMode, FeatureGrid};
use crate::io_error::{FileError, FileResult};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

/// One scalar field over the grid, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub enum VtkField {
    Int { name: String, values: Vec<i64> },
    Float { name: String, values: Vec<f64> },
}

impl VtkField {
    pub fn name(&self) -> &str {
        match self {
            VtkField::Int { name, .. } => name,
            VtkField::Float { name, .. } => name,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VtkField::Int { values, .. } => values.len(),
            VtkField::Float { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parsed structured-points file.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkGrid {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub fields: Vec<VtkField>,
}

/// Writes `DATASET STRUCTURED_POINTS` with one `SCALARS` section per
/// field. Fields must all have `dims` product length.
pub fn write_structured_points(
    path: &Path,
    title: &str,
    dims: [usize; 3],
    origin: [f64; 3],
    spacing: [f64; 3],
    fields: &[VtkField],
) -> FileResult<()> {
    let n = dims[0] * dims[1] * dims[2];
    for f in fields {
        assert_eq!(f.len(), n, "field {} does not match grid size", f.name());
    }
    let file = fs::File::create(path).map_err(|e| FileError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| FileError::io(path, e);
    writeln!(w, "# vtk DataFile Version 3.0").map_err(io)?;
    writeln!(w, "{title}").map_err(io)?;
    writeln!(w, "ASCII").map_err(io)?;
    writeln!(w, "DATASET STRUCTURED_POINTS").map_err(io)?;
    writeln!(w, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2]).map_err(io)?;
    writeln!(w, "ORIGIN {} {} {}", origin[0], origin[1], origin[2]).map_err(io)?;
    writeln!(w, "SPACING {} {} {}", spacing[0], spacing[1], spacing[2]).map_err(io)?;
    writeln!(w, "POINT_DATA {n}").map_err(io)?;
    for field in fields {
        match field {
            VtkField::Int { name, values } => {
                writeln!(w, "SCALARS {name} int 1").map_err(io)?;
                writeln!(w, "LOOKUP_TABLE default").map_err(io)?;
                for chunk in values.chunks(12) {
                    let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
                    writeln!(w, "{}", line.join(" ")).map_err(io)?;
                }
            }
            VtkField::Float { name, values } => {
                writeln!(w, "SCALARS {name} double 1").map_err(io)?;
                writeln!(w, "LOOKUP_TABLE default").map_err(io)?;
                for chunk in values.chunks(8) {
                    let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
                    writeln!(w, "{}", line.join(" ")).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

/// Reads back the subset emitted by [`write_structured_points`].
pub fn read_structured_points(path: &Path) -> FileResult<VtkGrid> {
    let text = fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    let bad = |line: usize, msg: &str| FileError::malformed(path, Some(line + 1), msg);
    let lines: Vec<&str> = text.lines().collect();
    let mut dims = None;
    let mut origin = [0.0; 3];
    let mut spacing = [1.0; 3];
    let mut fields = Vec::new();
    let mut i = 0usize;
    let mut point_count = 0usize;
    while i < lines.len() {
        let line = lines[i].trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("DIMENSIONS") => {
                let vals: Vec<usize> = parts.filter_map(|p| p.parse().ok()).collect();
                if vals.len() != 3 {
                    return Err(bad(i, "DIMENSIONS needs three integers"));
                }
                dims = Some([vals[0], vals[1], vals[2]]);
            }
            Some("ORIGIN") => {
                let vals: Vec<f64> = parts.filter_map(|p| p.parse().ok()).collect();
                if vals.len() != 3 {
                    return Err(bad(i, "ORIGIN needs three floats"));
                }
                origin = [vals[0], vals[1], vals[2]];
            }
            Some("SPACING") => {
                let vals: Vec<f64> = parts.filter_map(|p| p.parse().ok()).collect();
                if vals.len() != 3 {
                    return Err(bad(i, "SPACING needs three floats"));
                }
                spacing = [vals[0], vals[1], vals[2]];
            }
            Some("POINT_DATA") => {
                point_count = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| bad(i, "POINT_DATA needs a count"))?;
            }
            Some("SCALARS") => {
                let name = parts
                    .next()
                    .ok_or_else(|| bad(i, "SCALARS needs a name"))?
                    .to_string();
                let dtype = parts
                    .next()
                    .ok_or_else(|| bad(i, "SCALARS needs a type"))?
                    .to_string();
                // Skip LOOKUP_TABLE line.
                i += 1;
                if i >= lines.len() || !lines[i].trim_start().starts_with("LOOKUP_TABLE") {
                    return Err(bad(i.min(lines.len() - 1), "expected LOOKUP_TABLE"));
                }
                let mut raw = Vec::with_capacity(point_count);
                while raw.len() < point_count {
                    i += 1;
                    if i >= lines.len() {
                        return Err(bad(lines.len() - 1, "scalar data truncated"));
                    }
                    for tok in lines[i].split_whitespace() {
                        raw.push(tok.to_string());
                    }
                }
                if raw.len() != point_count {
                    return Err(bad(i, "scalar data overruns POINT_DATA count"));
                }
                let field = if dtype == "int" || dtype == "long" {
                    let mut values = Vec::with_capacity(raw.len());
                    for tok in &raw {
                        values.push(
                            tok.parse::<i64>()
                                .map_err(|_| bad(i, "bad integer scalar"))?,
                        );
                    }
                    VtkField::Int { name, values }
                } else {
                    let mut values = Vec::with_capacity(raw.len());
                    for tok in &raw {
                        values.push(tok.parse::<f64>().map_err(|_| bad(i, "bad float scalar"))?);
                    }
                    VtkField::Float { name, values }
                };
                fields.push(field);
            }
            _ => {}
        }
        i += 1;
    }
    let dims = dims.ok_or_else(|| FileError::malformed(path, None, "missing DIMENSIONS"))?;
    Ok(VtkGrid {
        dims,
        origin,
        spacing,
        fields,
    })
}

/// Fill value for grid positions that carry no window (skipped during
/// feature extraction).
pub const MISSING_LABEL: i64 = -1;

/// Dense label field over the window grid in the display convention
/// (anomaly 1, normal 0, artefacts 2+); missing windows get
/// [`MISSING_LABEL`].
pub fn label_field(map: &ClusterMap) -> Vec<i64> {
    let [mx, my, mz] = map.grid_dims;
    let mut out = vec![MISSING_LABEL; mx * my * mz];
    let display = map.display_labels();
    for (i, p) in map.positions.iter().enumerate() {
        out[p[0] + mx * (p[1] + my * p[2])] = display[i] as i64;
    }
    out
}

/// VTK export of a cluster map. Spacing is the window stride in
/// voxels; the origin sits at the center of the first window.
pub fn export_labels_vtk(path: &Path, map: &ClusterMap, cube_edge: usize, stride: usize, window: usize) -> FileResult<()> {
    let spacing = (stride * cube_edge) as f64;
    let origin = (window * cube_edge) as f64 / 2.0;
    write_structured_points(
        path,
        "fibre anomaly labels",
        map.grid_dims,
        [origin; 3],
        [spacing; 3],
        &[VtkField::Int {
            name: "label".to_string(),
            values: label_field(map),
        }],
    )
}

/// VTK export of window features: one scalar field per attribute plus
/// the sample count and a presence mask (missing windows carry 0).
pub fn export_features_vtk(path: &Path, grid: &FeatureGrid) -> FileResult<()> {
    let [mx, my, mz] = grid.grid_dims;
    let n = mx * my * mz;
    let spacing = (grid.window_spec.stride * grid.cube_edge) as f64;
    let origin = (grid.window_spec.window * grid.cube_edge) as f64 / 2.0;
    let mut mask = vec![0i64; n];
    let mut count = vec![0i64; n];
    let mut entropy = vec![0.0f64; n];
    let mut mean = [vec![0.0f64; n], vec![0.0f64; n], vec![0.0f64; n]];
    for f in &grid.features {
        let idx = f.pos[0] + mx * (f.pos[1] + my * f.pos[2]);
        mask[idx] = 1;
        count[idx] = f.n as i64;
        if let Some(h) = f.entropy {
            entropy[idx] = h;
        }
        if let Some(m) = f.mean_dir {
            for k in 0..3 {
                mean[k][idx] = m[k];
            }
        }
    }
    let mut fields = vec![
        VtkField::Int {
            name: "mask".to_string(),
            values: mask,
        },
        VtkField::Int {
            name: "N".to_string(),
            values: count,
        },
    ];
    if matches!(grid.mode, AttributeMode::Entropy | AttributeMode::Both) {
        fields.push(VtkField::Float {
            name: "H".to_string(),
            values: entropy,
        });
    }
    if matches!(grid.mode, AttributeMode::MeanDirection | AttributeMode::Both) {
        let [x, y, z] = mean;
        fields.push(VtkField::Float { name: "X".to_string(), values: x });
        fields.push(VtkField::Float { name: "Y".to_string(), values: y });
        fields.push(VtkField::Float { name: "Z".to_string(), values: z });
    }
    write_structured_points(
        path,
        "fibre window features",
        grid.grid_dims,
        [origin; 3],
        [spacing; 3],
        &fields,
    )
}
