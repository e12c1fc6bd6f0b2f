//! Local fibre directions from Hessian eigenanalysis of the smoothed
//! gray image, aggregated to one axial direction per cube of voxels.
//!
//! At every voxel above the fibre threshold the 3x3 Hessian of the
//! Gaussian-smoothed image is built from central differences; the
//! eigenvector of the smallest-magnitude eigenvalue points along the
//! tube. Cubes average their voxels through the orientation tensor
//! `sum v v^T`, which is invariant to the per-voxel sign ambiguity.

use crate::cluster::csv_error;
use crate::geometry::{AxialDirection, UnitVector};
use crate::io_error::{FileError, FileResult};
use crate::volume::{otsu_threshold, reflect, smooth_gaussian, Volume3D};
use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DirFieldError {
    #[error("invalid direction-field parameters: {0}")]
    InvalidParams(String),
}

/// Per-voxel classification after the Hessian pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum VoxelStatus {
    /// At or below the fibre threshold; carries no direction.
    Background = 0,
    /// Above threshold but the two smallest |eigenvalues| were
    /// indistinguishable, so the axis is undefined.
    Degenerate = 1,
    Valid = 2,
}

/// Dense per-voxel directions plus the fibre mask.
pub struct VoxelDirections {
    dims: [usize; 3],
    directions: Vec<[f32; 3]>,
    status: Vec<VoxelStatus>,
    /// Gray threshold actually applied (from Otsu when not fixed).
    pub threshold: f32,
}

impl VoxelDirections {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn status(&self) -> &[VoxelStatus] {
        &self.status
    }

    pub fn direction(&self, idx: usize) -> Option<UnitVector> {
        (self.status[idx] == VoxelStatus::Valid).then(|| {
            let d = self.directions[idx];
            UnitVector::from_unit_unchecked(d[0] as f64, d[1] as f64, d[2] as f64)
        })
    }

    /// Count of voxels above the fibre threshold.
    pub fn fibre_voxel_count(&self) -> usize {
        self.status
            .iter()
            .filter(|&&s| s != VoxelStatus::Background)
            .count()
    }
}

/// Eigenvalue gap below which a voxel Hessian is flagged degenerate.
pub const DEGENERATE_EIGEN_GAP: f64 = 1e-9;

/// Per-voxel fibre axes from Hessian eigenanalysis.
///
/// `threshold = None` uses Otsu's threshold of the smoothed volume.
/// Voxels at or below the threshold are masked out. Parallel over
/// z-planes with deterministic output.
pub fn hessian_directions(
    vol: &Volume3D,
    sigma: f64,
    threshold: Option<f32>,
) -> Result<VoxelDirections, DirFieldError> {
    if vol.is_empty() {
        return Err(DirFieldError::InvalidParams("volume is empty".into()));
    }
    if sigma < 0.5 {
        return Err(DirFieldError::InvalidParams(format!(
            "sigma {sigma} below 0.5 voxel"
        )));
    }
    let dims = vol.dims();
    let [nx, ny, nz] = dims;
    let smoothed = smooth_gaussian(&vol.to_f32(), dims, sigma);
    let threshold = threshold.unwrap_or_else(|| otsu_threshold(&smoothed));

    let plane = nx * ny;
    let mut directions = vec![[0.0f32; 3]; smoothed.len()];
    let mut status = vec![VoxelStatus::Background; smoothed.len()];

    directions
        .par_chunks_mut(plane)
        .zip(status.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(z, (dir_plane, status_plane))| {
            let at = |x: isize, y: isize, zz: isize| -> f64 {
                let xi = reflect(x, nx);
                let yi = reflect(y, ny);
                let zi = reflect(zz, nz);
                smoothed[xi + nx * (yi + ny * zi)] as f64
            };
            for y in 0..ny {
                for x in 0..nx {
                    let idx = x + nx * y;
                    if smoothed[idx + plane * z] <= threshold {
                        continue;
                    }
                    let (xi, yi, zi) = (x as isize, y as isize, z as isize);
                    let c = at(xi, yi, zi);
                    let hxx = at(xi + 1, yi, zi) - 2.0 * c + at(xi - 1, yi, zi);
                    let hyy = at(xi, yi + 1, zi) - 2.0 * c + at(xi, yi - 1, zi);
                    let hzz = at(xi, yi, zi + 1) - 2.0 * c + at(xi, yi, zi - 1);
                    let hxy = (at(xi + 1, yi + 1, zi) - at(xi + 1, yi - 1, zi)
                        - at(xi - 1, yi + 1, zi)
                        + at(xi - 1, yi - 1, zi))
                        / 4.0;
                    let hxz = (at(xi + 1, yi, zi + 1) - at(xi + 1, yi, zi - 1)
                        - at(xi - 1, yi, zi + 1)
                        + at(xi - 1, yi, zi - 1))
                        / 4.0;
                    let hyz = (at(xi, yi + 1, zi + 1) - at(xi, yi + 1, zi - 1)
                        - at(xi, yi - 1, zi + 1)
                        + at(xi, yi - 1, zi - 1))
                        / 4.0;
                    let hessian =
                        Matrix3::new(hxx, hxy, hxz, hxy, hyy, hyz, hxz, hyz, hzz);
                    let eigen = SymmetricEigen::new(hessian);
                    let mut order = [0usize, 1, 2];
                    order.sort_by(|&a, &b| {
                        eigen.eigenvalues[a]
                            .abs()
                            .partial_cmp(&eigen.eigenvalues[b].abs())
                            .unwrap()
                    });
                    let gap = eigen.eigenvalues[order[1]].abs()
                        - eigen.eigenvalues[order[0]].abs();
                    if gap < DEGENERATE_EIGEN_GAP {
                        status_plane[idx] = VoxelStatus::Degenerate;
                        continue;
                    }
                    let v = eigen.eigenvectors.column(order[0]);
                    match AxialDirection::from_vector(v[0], v[1], v[2]) {
                        Ok(axis) => {
                            let [ax, ay, az] = axis.components();
                            dir_plane[idx] = [ax as f32, ay as f32, az as f32];
                            status_plane[idx] = VoxelStatus::Valid;
                        }
                        Err(_) => status_plane[idx] = VoxelStatus::Degenerate,
                    }
                }
            }
        });

    Ok(VoxelDirections {
        dims,
        directions,
        status,
        threshold,
    })
}

/// One cube of the direction grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeCell {
    /// Mean axis; only meaningful when `valid`.
    pub direction: Option<AxialDirection>,
    /// Above-threshold voxels in the cube extent.
    pub fibre_voxels: u32,
}

/// Coarse grid of per-cube axial directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionField {
    grid_dims: [usize; 3],
    cube_edge: usize,
    cells: Vec<CubeCell>,
}

impl DirectionField {
    pub fn from_cells(
        grid_dims: [usize; 3],
        cube_edge: usize,
        cells: Vec<(Option<AxialDirection>, u32)>,
    ) -> Self {
        assert_eq!(cells.len(), grid_dims[0] * grid_dims[1] * grid_dims[2]);
        Self {
            grid_dims,
            cube_edge,
            cells: cells
                .into_iter()
                .map(|(direction, fibre_voxels)| CubeCell {
                    direction,
                    fibre_voxels,
                })
                .collect(),
        }
    }

    pub fn grid_dims(&self) -> [usize; 3] {
        self.grid_dims
    }

    pub fn cube_edge(&self) -> usize {
        self.cube_edge
    }

    pub fn cells(&self) -> &[CubeCell] {
        &self.cells
    }

    #[inline]
    pub fn cell_index(&self, pos: [usize; 3]) -> usize {
        pos[0] + self.grid_dims[0] * (pos[1] + self.grid_dims[1] * pos[2])
    }

    /// Direction of the cube at grid position `pos`, if inside the grid
    /// and valid.
    pub fn direction_at(&self, pos: [usize; 3]) -> Option<AxialDirection> {
        if (0..3).any(|k| pos[k] >= self.grid_dims[k]) {
            return None;
        }
        self.cells[self.cell_index(pos)].direction
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.direction.is_some()).count()
    }
}

/// Default minimum number of valid voxels for a cube to carry a
/// direction.
pub const DEFAULT_MIN_VOXELS: usize = 8;

/// Aggregates per-voxel directions to one axis per `cube_edge`-voxel
/// cube via the principal eigenvector of the orientation tensor.
///
/// Cubes with fewer than `min_voxels` valid voxels are invalid.
/// Parallel over cubes, deterministic.
pub fn aggregate_to_cubes(
    voxels: &VoxelDirections,
    cube_edge: usize,
    min_voxels: usize,
) -> Result<DirectionField, DirFieldError> {
    if cube_edge < 2 {
        return Err(DirFieldError::InvalidParams(format!(
            "cube edge {cube_edge} below 2"
        )));
    }
    let [nx, ny, nz] = voxels.dims;
    let grid_dims = [nx / cube_edge, ny / cube_edge, nz / cube_edge];
    if grid_dims.contains(&0) {
        return Err(DirFieldError::InvalidParams(
            "volume smaller than one cube".into(),
        ));
    }
    let n_cells = grid_dims[0] * grid_dims[1] * grid_dims[2];
    let cells: Vec<CubeCell> = (0..n_cells)
        .into_par_iter()
        .map(|cell| {
            let cx = cell % grid_dims[0];
            let cy = (cell / grid_dims[0]) % grid_dims[1];
            let cz = cell / (grid_dims[0] * grid_dims[1]);
            let mut tensor = [[0.0f64; 3]; 3];
            let mut valid = 0usize;
            let mut fibre_voxels = 0u32;
            for dz in 0..cube_edge {
                for dy in 0..cube_edge {
                    for dx in 0..cube_edge {
                        let x = cx * cube_edge + dx;
                        let y = cy * cube_edge + dy;
                        let z = cz * cube_edge + dz;
                        let idx = x + nx * (y + ny * z);
                        if voxels.status[idx] == VoxelStatus::Background {
                            continue;
                        }
                        fibre_voxels += 1;
                        if voxels.status[idx] != VoxelStatus::Valid {
                            continue;
                        }
                        valid += 1;
                        let d = voxels.directions[idx];
                        for (r, dr) in d.iter().enumerate() {
                            for (c, dc) in d.iter().enumerate() {
                                tensor[r][c] += (*dr as f64) * (*dc as f64);
                            }
                        }
                    }
                }
            }
            if valid < min_voxels {
                return CubeCell {
                    direction: None,
                    fibre_voxels,
                };
            }
            let m = Matrix3::new(
                tensor[0][0],
                tensor[0][1],
                tensor[0][2],
                tensor[1][0],
                tensor[1][1],
                tensor[1][2],
                tensor[2][0],
                tensor[2][1],
                tensor[2][2],
            );
            let eigen = SymmetricEigen::new(m);
            let principal = (0..3)
                .max_by(|&a, &b| {
                    eigen.eigenvalues[a]
                        .partial_cmp(&eigen.eigenvalues[b])
                        .unwrap()
                })
                .unwrap();
            let v = eigen.eigenvectors.column(principal);
            CubeCell {
                direction: AxialDirection::from_vector(v[0], v[1], v[2]).ok(),
                fibre_voxels,
            }
        })
        .collect();
    Ok(DirectionField {
        grid_dims,
        cube_edge,
        cells,
    })
}

#[derive(Serialize, Deserialize)]
struct CubeRecord {
    ix: usize,
    iy: usize,
    iz: usize,
    x: f64,
    y: f64,
    z: f64,
    count: u32,
    valid: u8,
}

impl DirectionField {
    /// CSV export `ix,iy,iz,x,y,z,count,valid`; invalid cubes carry
    /// zero components. Every cube is written, so the grid shape is
    /// recoverable on import.
    pub fn save_csv(&self, path: &Path) -> FileResult<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for z in 0..self.grid_dims[2] {
            for y in 0..self.grid_dims[1] {
                for x in 0..self.grid_dims[0] {
                    let cell = &self.cells[self.cell_index([x, y, z])];
                    let d = cell.direction.map(|d| d.components()).unwrap_or([0.0; 3]);
                    w.serialize(CubeRecord {
                        ix: x,
                        iy: y,
                        iz: z,
                        x: d[0],
                        y: d[1],
                        z: d[2],
                        count: cell.fibre_voxels,
                        valid: u8::from(cell.direction.is_some()),
                    })
                    .map_err(|e| csv_error(path, e))?;
                }
            }
        }
        w.flush().map_err(|e| FileError::io(path, e))?;
        // Cube edge rides along in a sidecar so downstream stages can
        // reconstruct voxel geometry.
        let sidecar_path = path.with_extension("meta.json");
        std::fs::write(
            &sidecar_path,
            serde_json::json!({ "grid_dims": self.grid_dims, "cube_edge": self.cube_edge })
                .to_string(),
        )
        .map_err(|e| FileError::io(&sidecar_path, e))?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> FileResult<Self> {
        let sidecar_path = path.with_extension("meta.json");
        let text = std::fs::read_to_string(&sidecar_path)
            .map_err(|e| FileError::io(&sidecar_path, e))?;
        let meta: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| FileError::malformed(&sidecar_path, None, e.to_string()))?;
        let grid_dims: [usize; 3] = serde_json::from_value(meta["grid_dims"].clone())
            .map_err(|e| FileError::malformed(&sidecar_path, None, e.to_string()))?;
        let cube_edge: usize = serde_json::from_value(meta["cube_edge"].clone())
            .map_err(|e| FileError::malformed(&sidecar_path, None, e.to_string()))?;
        let mut cells = vec![
            CubeCell {
                direction: None,
                fibre_voxels: 0
            };
            grid_dims[0] * grid_dims[1] * grid_dims[2]
        ];
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        for (row, record) in reader.deserialize::<CubeRecord>().enumerate() {
            let r = record.map_err(|e| FileError::malformed(path, Some(row + 2), e.to_string()))?;
            if r.ix >= grid_dims[0] || r.iy >= grid_dims[1] || r.iz >= grid_dims[2] {
                return Err(FileError::malformed(
                    path,
                    Some(row + 2),
                    "cube index outside grid",
                ));
            }
            let idx = r.ix + grid_dims[0] * (r.iy + grid_dims[1] * r.iz);
            let direction = if r.valid != 0 {
                // Components were written from a canonical axis; re-wrap
                // without renormalizing so the roundtrip is bit-exact.
                let norm2 = r.x * r.x + r.y * r.y + r.z * r.z;
                if (norm2 - 1.0).abs() > 1e-9 {
                    return Err(FileError::malformed(
                        path,
                        Some(row + 2),
                        format!("direction ({}, {}, {}) is not unit length", r.x, r.y, r.z),
                    ));
                }
                Some(AxialDirection::canonicalize(UnitVector::from_unit_unchecked(
                    r.x, r.y, r.z,
                )))
            } else {
                None
            };
            cells[idx] = CubeCell {
                direction,
                fibre_voxels: r.count,
            };
        }
        Ok(DirectionField {
            grid_dims,
            cube_edge,
            cells,
        })
    }
}
