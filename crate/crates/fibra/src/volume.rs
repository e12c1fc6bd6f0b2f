//! Dense 3D grayscale volumes and the filtering primitives shared by the
//! simulator and the direction estimator.
//!
//! Voxels are stored x-fastest, z-slowest: `index = x + nx*(y + ny*z)`.
//! On disk a volume is a headerless stream of `u8` voxels in that order,
//! next to a JSON sidecar `{ "dims": [nx,ny,nz], "dtype": "u8",
//! "order": "x-fastest" }`.

use crate::io_error::{FileError, FileResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Dense 8-bit grayscale voxel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    voxels: Vec<u8>,
    /// Physical edge length of one voxel, if known (isotropic).
    pub voxel_spacing: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct VolumeSidecar {
    dims: [usize; 3],
    dtype: String,
    order: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    voxel_spacing: Option<f64>,
}

impl Volume3D {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            voxels: vec![0u8; dims[0] * dims[1] * dims[2]],
            voxel_spacing: None,
        }
    }

    pub fn from_voxels(dims: [usize; 3], voxels: Vec<u8>) -> Self {
        assert_eq!(voxels.len(), dims[0] * dims[1] * dims[2]);
        Self {
            dims,
            voxels,
            voxel_spacing: None,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.voxels[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: u8) {
        let i = self.index(x, y, z);
        self.voxels[i] = value;
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [u8] {
        &mut self.voxels
    }

    /// Writes the raw voxel stream to `path` and the JSON sidecar next to
    /// it (same stem, `.json` extension).
    pub fn save_raw(&self, path: &Path) -> FileResult<()> {
        let file = fs::File::create(path).map_err(|e| FileError::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.voxels)
            .and_then(|_| w.flush())
            .map_err(|e| FileError::io(path, e))?;
        let sidecar = VolumeSidecar {
            dims: self.dims,
            dtype: "u8".to_string(),
            order: "x-fastest".to_string(),
            voxel_spacing: self.voxel_spacing,
        };
        let sidecar_path = path.with_extension("json");
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        fs::write(&sidecar_path, json).map_err(|e| FileError::io(&sidecar_path, e))?;
        Ok(())
    }

    /// Loads a raw volume written by [`save_raw`](Self::save_raw).
    pub fn load_raw(path: &Path) -> FileResult<Self> {
        let sidecar_path = path.with_extension("json");
        let text =
            fs::read_to_string(&sidecar_path).map_err(|e| FileError::io(&sidecar_path, e))?;
        let sidecar: VolumeSidecar = serde_json::from_str(&text)
            .map_err(|e| FileError::malformed(&sidecar_path, None, e.to_string()))?;
        if sidecar.dtype != "u8" || sidecar.order != "x-fastest" {
            return Err(FileError::malformed(
                &sidecar_path,
                None,
                format!(
                    "unsupported dtype/order: {}/{}",
                    sidecar.dtype, sidecar.order
                ),
            ));
        }
        let voxels = fs::read(path).map_err(|e| FileError::io(path, e))?;
        let expected = sidecar.dims[0] * sidecar.dims[1] * sidecar.dims[2];
        if voxels.len() != expected {
            return Err(FileError::malformed(
                path,
                None,
                format!("voxel count {} does not match dims ({expected})", voxels.len()),
            ));
        }
        Ok(Self {
            dims: sidecar.dims,
            voxels,
            voxel_spacing: sidecar.voxel_spacing,
        })
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.voxels.iter().map(|&v| v as f32).collect()
    }
}

/// Mirrors an out-of-range index back into `[0, n)` (half-sample
/// symmetric: -1 -> 0, n -> n-1).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Normalized 1D Gaussian kernel truncated at 3 sigma.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut kernel = vec![0.0f64; 2 * radius + 1];
    for (i, k) in kernel.iter_mut().enumerate() {
        let t = i as f64 - radius as f64;
        *k = (-t * t / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = kernel.iter().sum();
    kernel.iter().map(|&k| (k / sum) as f32).collect()
}

/// Separable Gaussian smoothing of an x-fastest f32 buffer, reflective
/// boundaries, kernel truncated at 3 sigma. `sigma <= 0` is a no-op.
pub fn smooth_gaussian(data: &[f32], dims: [usize; 3], sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() / 2;
    let [nx, ny, nz] = dims;

    let convolve_line = |line_in: &[f32], line_out: &mut [f32]| {
        let n = line_in.len();
        for (i, out) in line_out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (k, &w) in kernel.iter().enumerate() {
                let j = reflect(i as isize + k as isize - radius as isize, n);
                acc += w * line_in[j];
            }
            *out = acc;
        }
    };

    // Pass 1: x (contiguous rows).
    let mut pass_x = vec![0.0f32; data.len()];
    pass_x
        .par_chunks_mut(nx)
        .zip(data.par_chunks(nx))
        .for_each(|(out, row)| convolve_line(row, out));

    // Pass 2: y, line-by-line per (x, z) with gather/scatter.
    let mut pass_y = vec![0.0f32; data.len()];
    pass_y
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(z, slab_out)| {
            let slab_in = &pass_x[z * nx * ny..(z + 1) * nx * ny];
            let mut line_in = vec![0.0f32; ny];
            let mut line_out = vec![0.0f32; ny];
            for x in 0..nx {
                for y in 0..ny {
                    line_in[y] = slab_in[x + nx * y];
                }
                convolve_line(&line_in, &mut line_out);
                for y in 0..ny {
                    slab_out[x + nx * y] = line_out[y];
                }
            }
        });

    // Pass 3: z, parallel over y-slabs of the output.
    let mut pass_z = vec![0.0f32; data.len()];
    let plane = nx * ny;
    pass_z
        .par_chunks_mut(nx)
        .enumerate()
        .for_each(|(row_idx, out_row)| {
            // row_idx enumerates (y, z) pairs: row_idx = y + ny * z.
            let y = row_idx % ny;
            let z = row_idx / ny;
            for x in 0..nx {
                let mut acc = 0.0f32;
                for (k, &w) in kernel.iter().enumerate() {
                    let zz = reflect(z as isize + k as isize - radius as isize, nz);
                    acc += w * pass_y[x + nx * y + plane * zz];
                }
                out_row[x] = acc;
            }
        });
    pass_z
}

/// Otsu's threshold over a 256-bin histogram of `[0, 255]` gray values.
///
/// Returns the bin-center threshold maximizing between-class variance;
/// for a constant image this is the constant itself (strict `>` masks
/// everything out).
pub fn otsu_threshold(data: &[f32]) -> f32 {
    let mut hist = [0u64; 256];
    for &v in data {
        let bin = v.clamp(0.0, 255.0) as usize;
        hist[bin.min(255)] += 1;
    }
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let weighted_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();

    let mut best_t = 0usize;
    let mut best_var = -1.0f64;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for (t, &count) in hist.iter().enumerate() {
        w0 += count as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total as f64 - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += t as f64 * count as f64;
        let mu0 = sum0 / w0;
        let mu1 = (weighted_total - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    if best_var <= 0.0 {
        // Degenerate histogram (single bin): threshold at the bin value.
        let bin = hist.iter().position(|&c| c > 0).unwrap_or(0);
        return bin as f32;
    }
    best_t as f32
}
