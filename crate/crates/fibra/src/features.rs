//! Window-level clustering attributes over the direction field: the
//! coordinate-wise mean of local directions and the nearest-neighbour
//! entropy of the local directional distribution.
//!
//! The entropy estimator is the Dobrushin-style plug-in
//!
//! ```text
//! H = 2 ln(rho_bar) + C1 + gamma + ln(N - 1)
//! ```
//!
//! where `rho_i` is the geodesic nearest-neighbour distance of sample
//! `i`, `rho_bar` the geometric mean of the `rho_i`, `gamma = 0.5772`
//! and `C1 = 1.1447`. `C1` equals `ln(pi)` rounded, the ball-volume
//! term of the two-dimensional estimator; the alternative reading of
//! the printed constant as the *argument* of the log (an additive term
//! `ln 1.1447 = 0.1351`) is available by overriding
//! [`EntropyParams::additive_constant`].

use crate::dirfield::DirectionField;
use crate::geometry::{geodesic_distance, AxialDirection, Metric, UnitVector};
use crate::io_error::{FileError, FileResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Euler's constant as printed alongside the estimator.
pub const EULER_GAMMA: f64 = 0.5772;
/// Default additive constant of the estimator (`ln(pi)` rounded).
pub const DEFAULT_ADDITIVE_CONSTANT: f64 = 1.1447;
/// Lower clamp for nearest-neighbour distances; duplicate directions
/// would otherwise send the log to minus infinity.
pub const MIN_NN_DISTANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("window contains no directions")]
    EmptyWindow,
    #[error("entropy estimator needs at least 2 samples, got {0}")]
    TooFewPoints(usize),
    #[error("no window reached the minimum sample size")]
    NoValidWindows,
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
}

/// Scanning-window geometry on the cube grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    /// Window edge, in cubes (>= 2).
    pub window: usize,
    /// Step between window origins, in cubes (>= 1).
    pub stride: usize,
    /// Windows with fewer valid directions are skipped (>= 2).
    pub min_samples: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window: 8,
            stride: 8,
            min_samples: 16,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.window < 2 {
            return Err(FeatureError::InvalidSpec("window edge must be >= 2".into()));
        }
        if self.stride < 1 {
            return Err(FeatureError::InvalidSpec("stride must be >= 1".into()));
        }
        if self.min_samples < 2 {
            return Err(FeatureError::InvalidSpec(
                "min_samples must be >= 2 (entropy needs two points)".into(),
            ));
        }
        Ok(())
    }

    /// Number of window positions per axis for a given cube grid.
    pub fn grid_dims(&self, cube_grid: [usize; 3]) -> [usize; 3] {
        let mut out = [0usize; 3];
        for k in 0..3 {
            out[k] = if cube_grid[k] >= self.window {
                (cube_grid[k] - self.window) / self.stride + 1
            } else {
                0
            };
        }
        out
    }

    /// All window grid positions, x-fastest.
    pub fn window_positions(&self, cube_grid: [usize; 3]) -> Vec<[usize; 3]> {
        let dims = self.grid_dims(cube_grid);
        let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    /// Center of a window in voxel coordinates.
    pub fn center_voxel(&self, pos: [usize; 3], cube_edge: usize) -> [f64; 3] {
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = (pos[k] * self.stride * cube_edge) as f64
                + (self.window * cube_edge) as f64 / 2.0;
        }
        c
    }
}

/// Which attributes a feature grid carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeMode {
    Entropy,
    MeanDirection,
    Both,
}

impl AttributeMode {
    /// Feature-space dimension: 1, 3 or 4.
    pub fn dim(&self) -> usize {
        match self {
            AttributeMode::Entropy => 1,
            AttributeMode::MeanDirection => 3,
            AttributeMode::Both => 4,
        }
    }
}

/// Constants of the entropy estimator, exposed as configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyParams {
    pub additive_constant: f64,
    pub euler_gamma: f64,
    pub min_distance: f64,
}

impl Default for EntropyParams {
    fn default() -> Self {
        Self {
            additive_constant: DEFAULT_ADDITIVE_CONSTANT,
            euler_gamma: EULER_GAMMA,
            min_distance: MIN_NN_DISTANCE,
        }
    }
}

/// Entropy value plus degeneracy diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    /// Fraction of nearest-neighbour distances that hit the lower clamp.
    pub clamped_fraction: f64,
}

impl EntropyEstimate {
    /// More than half the distances collapsed to the clamp; the window
    /// is effectively a point mass.
    pub fn is_degenerate(&self) -> bool {
        self.clamped_fraction > 0.5
    }
}

/// Coordinate-wise mean of the (canonicalized) window directions.
/// No renormalization: the result lies inside the unit ball.
pub fn mean_direction(directions: &[AxialDirection]) -> Result<[f64; 3], FeatureError> {
    if directions.is_empty() {
        return Err(FeatureError::EmptyWindow);
    }
    let mut sum = [0.0f64; 3];
    for d in directions {
        let c = d.components();
        sum[0] += c[0];
        sum[1] += c[1];
        sum[2] += c[2];
    }
    let n = directions.len() as f64;
    Ok([sum[0] / n, sum[1] / n, sum[2] / n])
}

/// Nearest-neighbour entropy with default constants.
pub fn nn_entropy(
    directions: &[UnitVector],
    metric: Metric,
) -> Result<EntropyEstimate, FeatureError> {
    nn_entropy_with(directions, metric, &EntropyParams::default())
}

/// Nearest-neighbour entropy of the directional sample.
///
/// The geometric mean of the nearest-neighbour distances is computed
/// as the exponential of the mean log so large windows cannot
/// underflow the product. With [`Metric::Axial`] the sample sign
/// convention is irrelevant.
pub fn nn_entropy_with(
    directions: &[UnitVector],
    metric: Metric,
    params: &EntropyParams,
) -> Result<EntropyEstimate, FeatureError> {
    let n = directions.len();
    if n < 2 {
        return Err(FeatureError::TooFewPoints(n));
    }
    let mut log_sum = 0.0f64;
    let mut clamped = 0usize;
    for (i, di) in directions.iter().enumerate() {
        let mut rho = f64::INFINITY;
        for (j, dj) in directions.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = geodesic_distance(di, dj, metric);
            if d < rho {
                rho = d;
            }
        }
        if rho < params.min_distance {
            rho = params.min_distance;
            clamped += 1;
        }
        log_sum += rho.ln();
    }
    let mean_log_rho = log_sum / n as f64;
    let value = 2.0 * mean_log_rho
        + params.additive_constant
        + params.euler_gamma
        + ((n - 1) as f64).ln();
    Ok(EntropyEstimate {
        value,
        clamped_fraction: clamped as f64 / n as f64,
    })
}

/// One window's attribute values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// Window grid coordinates.
    pub pos: [usize; 3],
    /// Sample count (valid cube directions in the window).
    pub n: usize,
    pub entropy: Option<f64>,
    pub mean_dir: Option<[f64; 3]>,
}

/// Per-dimension shift/scale applied to the feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Window features over the direction field, ready for clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    /// Window grid dimensions.
    pub grid_dims: [usize; 3],
    pub mode: AttributeMode,
    pub window_spec: WindowSpec,
    /// Cube edge of the source direction field, in voxels.
    pub cube_edge: usize,
    /// Present features, sorted x-fastest by window position.
    pub features: Vec<FeatureVector>,
    /// Standardization record, when applied.
    pub normalization: Option<Normalization>,
    /// Number of windows whose entropy hit the degeneracy clamp.
    pub degenerate_windows: usize,
}

impl FeatureGrid {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mode.dim()
    }

    /// Feature matrix row for window `i`, ordered `[H, X, Y, Z]` with
    /// absent attributes dropped.
    pub fn row(&self, i: usize) -> Vec<f64> {
        let f = &self.features[i];
        let mut row = Vec::with_capacity(self.dim());
        if let Some(h) = f.entropy {
            row.push(h);
        }
        if let Some(m) = f.mean_dir {
            row.extend_from_slice(&m);
        }
        row
    }

    /// Flattened n x d feature matrix.
    pub fn matrix(&self) -> Vec<f64> {
        (0..self.len()).flat_map(|i| self.row(i)).collect()
    }

    pub fn positions(&self) -> Vec<[usize; 3]> {
        self.features.iter().map(|f| f.pos).collect()
    }

    /// Mean entropy over the windows selected by the predicate; `None`
    /// when the entropy attribute is absent or nothing is selected.
    pub fn mean_entropy_where(&self, select: impl Fn(usize) -> bool) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, f) in self.features.iter().enumerate() {
            if select(i) {
                sum += f.entropy?;
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }
}

/// Extracts window features from a direction field.
///
/// Windows with fewer than `spec.min_samples` valid cube directions are
/// skipped. `standardize = None` applies the default: off for single
/// attributes, on for [`AttributeMode::Both`] (raw entropy and mean
/// direction live on incomparable scales).
pub fn extract_features(
    field: &DirectionField,
    spec: &WindowSpec,
    mode: AttributeMode,
    metric: Metric,
    standardize: Option<bool>,
    entropy_params: &EntropyParams,
) -> Result<FeatureGrid, FeatureError> {
    spec.validate()?;
    let cube_grid = field.grid_dims();
    let grid_dims = spec.grid_dims(cube_grid);
    let positions = spec.window_positions(cube_grid);

    let results: Vec<Option<(FeatureVector, bool)>> = positions
        .par_iter()
        .map(|&pos| {
            let mut dirs = Vec::new();
            for cz in 0..spec.window {
                for cy in 0..spec.window {
                    for cx in 0..spec.window {
                        let cube = [
                            pos[0] * spec.stride + cx,
                            pos[1] * spec.stride + cy,
                            pos[2] * spec.stride + cz,
                        ];
                        if let Some(dir) = field.direction_at(cube) {
                            dirs.push(dir);
                        }
                    }
                }
            }
            if dirs.len() < spec.min_samples {
                return None;
            }
            let mut entropy = None;
            let mut degenerate = false;
            if matches!(mode, AttributeMode::Entropy | AttributeMode::Both) {
                let units: Vec<UnitVector> = dirs.iter().map(|d| *d.as_unit()).collect();
                let est = nn_entropy_with(&units, metric, entropy_params)
                    .expect("window has >= 2 samples");
                degenerate = est.is_degenerate();
                entropy = Some(est.value);
            }
            let mean_dir = matches!(mode, AttributeMode::MeanDirection | AttributeMode::Both)
                .then(|| mean_direction(&dirs).expect("window is non-empty"));
            Some((
                FeatureVector {
                    pos,
                    n: dirs.len(),
                    entropy,
                    mean_dir,
                },
                degenerate,
            ))
        })
        .collect();

    let mut features = Vec::new();
    let mut degenerate_windows = 0usize;
    for item in results.into_iter().flatten() {
        degenerate_windows += usize::from(item.1);
        features.push(item.0);
    }
    if features.is_empty() {
        return Err(FeatureError::NoValidWindows);
    }

    let mut grid = FeatureGrid {
        grid_dims,
        mode,
        window_spec: *spec,
        cube_edge: field.cube_edge(),
        features,
        normalization: None,
        degenerate_windows,
    };
    let standardize = standardize.unwrap_or(matches!(mode, AttributeMode::Both));
    if standardize {
        apply_standardization(&mut grid);
    }
    Ok(grid)
}

/// Z-scores every feature dimension across windows, recording the
/// shift/scale. Constant dimensions keep scale 1.
fn apply_standardization(grid: &mut FeatureGrid) {
    let d = grid.dim();
    let n = grid.len();
    let mut shift = vec![0.0f64; d];
    let mut scale = vec![0.0f64; d];
    for i in 0..n {
        for (k, v) in grid.row(i).iter().enumerate() {
            shift[k] += v;
        }
    }
    for s in &mut shift {
        *s /= n as f64;
    }
    for i in 0..n {
        for (k, v) in grid.row(i).iter().enumerate() {
            scale[k] += (v - shift[k]) * (v - shift[k]);
        }
    }
    for s in &mut scale {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    for f in &mut grid.features {
        let mut k = 0;
        if let Some(h) = f.entropy.as_mut() {
            *h = (*h - shift[k]) / scale[k];
            k += 1;
        }
        if let Some(m) = f.mean_dir.as_mut() {
            for v in m.iter_mut() {
                *v = (*v - shift[k]) / scale[k];
                k += 1;
            }
        }
    }
    grid.normalization = Some(Normalization { shift, scale });
}

#[derive(Serialize, Deserialize)]
struct FeatureRecord {
    wx: usize,
    wy: usize,
    wz: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "H")]
    h: Option<f64>,
    #[serde(rename = "X")]
    x: Option<f64>,
    #[serde(rename = "Y")]
    y: Option<f64>,
    #[serde(rename = "Z")]
    z: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct FeatureSidecar {
    mode: AttributeMode,
    grid_dims: [usize; 3],
    window_spec: WindowSpec,
    cube_edge: usize,
    normalization: Option<Normalization>,
    degenerate_windows: usize,
}

impl FeatureGrid {
    /// CSV export `wx,wy,wz,N,H,X,Y,Z` (empty fields for unused
    /// attributes) plus a JSON sidecar with grid metadata and the
    /// normalization record.
    pub fn save_csv(&self, path: &Path) -> FileResult<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::cluster::csv_error(path, e))?;
        for f in &self.features {
            w.serialize(FeatureRecord {
                wx: f.pos[0],
                wy: f.pos[1],
                wz: f.pos[2],
                n: f.n,
                h: f.entropy,
                x: f.mean_dir.map(|m| m[0]),
                y: f.mean_dir.map(|m| m[1]),
                z: f.mean_dir.map(|m| m[2]),
            })
            .map_err(|e| crate::cluster::csv_error(path, e))?;
        }
        w.flush().map_err(|e| FileError::io(path, e))?;
        let sidecar = FeatureSidecar {
            mode: self.mode,
            grid_dims: self.grid_dims,
            window_spec: self.window_spec,
            cube_edge: self.cube_edge,
            normalization: self.normalization.clone(),
            degenerate_windows: self.degenerate_windows,
        };
        let sidecar_path = path.with_extension("meta.json");
        fs::write(
            &sidecar_path,
            serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
        )
        .map_err(|e| FileError::io(&sidecar_path, e))?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> FileResult<Self> {
        let sidecar_path = path.with_extension("meta.json");
        let text =
            fs::read_to_string(&sidecar_path).map_err(|e| FileError::io(&sidecar_path, e))?;
        let sidecar: FeatureSidecar = serde_json::from_str(&text)
            .map_err(|e| FileError::malformed(&sidecar_path, None, e.to_string()))?;
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| crate::cluster::csv_error(path, e))?;
        let mut features = Vec::new();
        for (row, record) in reader.deserialize::<FeatureRecord>().enumerate() {
            let r = record.map_err(|e| FileError::malformed(path, Some(row + 2), e.to_string()))?;
            let mean_dir = match (r.x, r.y, r.z) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                (None, None, None) => None,
                _ => {
                    return Err(FileError::malformed(
                        path,
                        Some(row + 2),
                        "mean-direction columns must be all present or all empty",
                    ))
                }
            };
            features.push(FeatureVector {
                pos: [r.wx, r.wy, r.wz],
                n: r.n,
                entropy: r.h,
                mean_dir,
            });
        }
        Ok(FeatureGrid {
            grid_dims: sidecar.grid_dims,
            mode: sidecar.mode,
            window_spec: sidecar.window_spec,
            cube_edge: sidecar.cube_edge,
            features,
            normalization: sidecar.normalization,
            degenerate_windows: sidecar.degenerate_windows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirfield::DirectionField;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn axis(x: f64, y: f64, z: f64) -> AxialDirection {
        AxialDirection::from_vector(x, y, z).unwrap()
    }

    /// Uniform sample on the full sphere.
    fn random_units(n: usize, seed: u64) -> Vec<UnitVector> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| crate::rsa::sample_vmf(&mut rng, [0.0, 0.0, 1.0], 0.0))
            .collect()
    }

    fn random_axes(n: usize, seed: u64) -> Vec<AxialDirection> {
        random_units(n, seed)
            .into_iter()
            .map(AxialDirection::canonicalize)
            .collect()
    }

    #[test]
    fn mean_direction_identity() {
        let dirs = vec![axis(0.0, 0.0, 1.0); 7];
        assert_eq!(mean_direction(&dirs).unwrap(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn mean_direction_two_point_average() {
        let dirs = vec![axis(1.0, 0.0, 0.0), axis(0.0, 1.0, 0.0)];
        assert_eq!(mean_direction(&dirs).unwrap(), [0.5, 0.5, 0.0]);
    }

    #[test]
    fn mean_direction_matches_resummation_oracle() {
        let dirs = random_axes(100, 8);
        let got = mean_direction(&dirs).unwrap();
        // Independent summation in reverse order.
        let mut expect = [0.0f64; 3];
        for d in dirs.iter().rev() {
            let c = d.components();
            for k in 0..3 {
                expect[k] += c[k] / 100.0;
            }
        }
        for k in 0..3 {
            assert_abs_diff_eq!(got[k], expect[k], epsilon = 1e-12);
        }
        // Mean of unit vectors stays in the unit ball.
        assert!((got[0] * got[0] + got[1] * got[1] + got[2] * got[2]).sqrt() <= 1.0 + 1e-12);
    }

    #[test]
    fn mean_direction_empty_window() {
        assert_eq!(mean_direction(&[]), Err(FeatureError::EmptyWindow));
    }

    #[test]
    fn entropy_two_point_plugin_value() {
        // Two directions one radian apart: H = 0 + 1.1447 + 0.5772 + ln 1.
        let a = UnitVector::new(0.0, 0.0, 1.0).unwrap();
        let b = UnitVector::new(1.0f64.sin(), 0.0, 1.0f64.cos()).unwrap();
        assert_abs_diff_eq!(
            geodesic_distance(&a, &b, Metric::Spherical),
            1.0,
            epsilon = 1e-12
        );
        let est = nn_entropy(&[a, b], Metric::Spherical).unwrap();
        assert_abs_diff_eq!(est.value, 1.7219, epsilon = 1e-12);
        assert_eq!(est.clamped_fraction, 0.0);
    }

    #[test]
    fn entropy_too_few_points() {
        let a = UnitVector::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(
            nn_entropy(&[a], Metric::Axial),
            Err(FeatureError::TooFewPoints(1))
        );
    }

    #[test]
    fn entropy_duplicate_points_hit_clamp() {
        let dirs = vec![UnitVector::new(0.0, 0.0, 1.0).unwrap(); 10];
        let est = nn_entropy(&dirs, Metric::Axial).unwrap();
        assert!(est.is_degenerate());
        assert_eq!(est.clamped_fraction, 1.0);
        let expected =
            2.0 * MIN_NN_DISTANCE.ln() + DEFAULT_ADDITIVE_CONSTANT + EULER_GAMMA + 9.0f64.ln();
        assert_abs_diff_eq!(est.value, expected, epsilon = 1e-12);
    }

    #[test]
    fn entropy_uniform_sphere_consistency() {
        // Smaller replication count here; the acceptance suite runs the
        // full 50-replication oracle.
        let reps = 12;
        let n = 1000;
        let mean: f64 = (0..reps)
            .map(|r| {
                let dirs = random_units(n, 1000 + r);
                nn_entropy(&dirs, Metric::Spherical).unwrap().value
            })
            .sum::<f64>()
            / reps as f64;
        assert_abs_diff_eq!(mean, (4.0 * PI).ln(), epsilon = 0.08);
    }

    #[test]
    fn entropy_uniform_axes_consistency() {
        let reps = 12;
        let n = 1000;
        let mean: f64 = (0..reps)
            .map(|r| {
                let dirs = random_units(n, 2000 + r);
                nn_entropy(&dirs, Metric::Axial).unwrap().value
            })
            .sum::<f64>()
            / reps as f64;
        assert_abs_diff_eq!(mean, (2.0 * PI).ln(), epsilon = 0.08);
    }

    #[test]
    fn entropy_and_mean_permutation_invariant() {
        let axes = random_axes(64, 3);
        let units: Vec<UnitVector> = axes.iter().map(|a| *a.as_unit()).collect();
        let before = nn_entropy(&units, Metric::Axial).unwrap().value;
        let mean_before = mean_direction(&axes).unwrap();
        let mut axes_p = axes.clone();
        let mut units_p = units.clone();
        axes_p.reverse();
        units_p.reverse();
        axes_p.swap(0, 21);
        units_p.swap(0, 21);
        axes_p.swap(5, 40);
        units_p.swap(5, 40);
        let after = nn_entropy(&units_p, Metric::Axial).unwrap().value;
        let mean_after = mean_direction(&axes_p).unwrap();
        assert_abs_diff_eq!(before, after, epsilon = 1e-12);
        for k in 0..3 {
            assert_abs_diff_eq!(mean_before[k], mean_after[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn entropy_rotation_invariant() {
        let dirs = random_units(128, 4);
        let angle: f64 = 0.83;
        let k = [1.0 / 3.0f64.sqrt(); 3];
        let rotate = |v: [f64; 3]| -> [f64; 3] {
            let (s, c) = angle.sin_cos();
            let kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
            let cross = [
                k[1] * v[2] - k[2] * v[1],
                k[2] * v[0] - k[0] * v[2],
                k[0] * v[1] - k[1] * v[0],
            ];
            [
                v[0] * c + cross[0] * s + k[0] * kv * (1.0 - c),
                v[1] * c + cross[1] * s + k[1] * kv * (1.0 - c),
                v[2] * c + cross[2] * s + k[2] * kv * (1.0 - c),
            ]
        };
        let rotated: Vec<UnitVector> = dirs
            .iter()
            .map(|d| {
                let r = rotate(d.components());
                UnitVector::new(r[0], r[1], r[2]).unwrap()
            })
            .collect();
        for metric in [Metric::Spherical, Metric::Axial] {
            let before = nn_entropy(&dirs, metric).unwrap().value;
            let after = nn_entropy(&rotated, metric).unwrap().value;
            assert_abs_diff_eq!(before, after, epsilon = 1e-9);
        }
    }

    #[test]
    fn duplicate_point_never_increases_geometric_mean() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..50 {
            let dirs = random_units(30, rng.gen());
            let est = nn_entropy(&dirs, Metric::Axial).unwrap();
            let mut with_dup = dirs.clone();
            with_dup.push(dirs[7]);
            let est_dup = nn_entropy(&with_dup, Metric::Axial).unwrap();
            // Recover rho_bar by inverting the formula; H must respond
            // only through rho_bar and ln(N-1).
            let inv = |v: f64, n: usize| {
                ((v - DEFAULT_ADDITIVE_CONSTANT - EULER_GAMMA - ((n - 1) as f64).ln()) / 2.0).exp()
            };
            let rho = inv(est.value, 30);
            let rho_dup = inv(est_dup.value, 31);
            assert!(rho_dup <= rho + 1e-12);
            let rebuilt = 2.0 * rho_dup.ln()
                + DEFAULT_ADDITIVE_CONSTANT
                + EULER_GAMMA
                + 30.0f64.ln();
            assert_abs_diff_eq!(rebuilt, est_dup.value, epsilon = 1e-9);
        }
    }

    fn uniform_field(dims: [usize; 3], dir: AxialDirection) -> DirectionField {
        DirectionField::from_cells(
            dims,
            4,
            (0..dims[0] * dims[1] * dims[2])
                .map(|_| (Some(dir), 10))
                .collect(),
        )
    }

    #[test]
    fn extract_single_window_partition() {
        let field = uniform_field([8, 8, 8], axis(0.0, 0.0, 1.0));
        let spec = WindowSpec { window: 8, stride: 8, min_samples: 16 };
        let grid = extract_features(
            &field,
            &spec,
            AttributeMode::Both,
            Metric::Axial,
            Some(false),
            &EntropyParams::default(),
        )
        .unwrap();
        assert_eq!(grid.grid_dims, [1, 1, 1]);
        assert_eq!(grid.len(), 1);
        assert_eq!(grid.features[0].n, 512);
    }

    #[test]
    fn extract_constant_field_is_degenerate() {
        let field = uniform_field([8, 8, 8], axis(0.0, 0.0, 1.0));
        let spec = WindowSpec { window: 4, stride: 4, min_samples: 16 };
        let grid = extract_features(
            &field,
            &spec,
            AttributeMode::Both,
            Metric::Axial,
            Some(false),
            &EntropyParams::default(),
        )
        .unwrap();
        assert_eq!(grid.len(), 8);
        assert_eq!(grid.degenerate_windows, 8);
        let n = 64f64;
        let floor_value =
            2.0 * MIN_NN_DISTANCE.ln() + DEFAULT_ADDITIVE_CONSTANT + EULER_GAMMA + (n - 1.0).ln();
        for f in &grid.features {
            assert_eq!(f.mean_dir, Some([0.0, 0.0, 1.0]));
            assert_abs_diff_eq!(f.entropy.unwrap(), floor_value, epsilon = 1e-12);
        }
    }

    #[test]
    fn extract_two_region_field_separates_mean_directions() {
        // Left half along x, right half along z.
        let dims = [8, 4, 4];
        let cells: Vec<(Option<AxialDirection>, u32)> = (0..dims[0] * dims[1] * dims[2])
            .map(|i| {
                let x = i % dims[0];
                let dir = if x < 4 {
                    axis(1.0, 0.0, 0.0)
                } else {
                    axis(0.0, 0.0, 1.0)
                };
                (Some(dir), 10)
            })
            .collect();
        let field = DirectionField::from_cells(dims, 4, cells);
        let spec = WindowSpec { window: 4, stride: 4, min_samples: 16 };
        let grid = extract_features(
            &field,
            &spec,
            AttributeMode::MeanDirection,
            Metric::Axial,
            Some(false),
            &EntropyParams::default(),
        )
        .unwrap();
        assert_eq!(grid.len(), 2);
        let a = grid.features[0].mean_dir.unwrap();
        let b = grid.features[1].mean_dir.unwrap();
        let da = axis(a[0], a[1], a[2]);
        let db = axis(b[0], b[1], b[2]);
        assert_abs_diff_eq!(da.distance(&db), PI / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn extract_skips_sparse_windows() {
        let dims = [4, 4, 4];
        let cells: Vec<(Option<AxialDirection>, u32)> = (0..64)
            .map(|i| {
                if i < 4 {
                    (Some(axis(0.0, 0.0, 1.0)), 10)
                } else {
                    (None, 0)
                }
            })
            .collect();
        let field = DirectionField::from_cells(dims, 4, cells);
        let spec = WindowSpec { window: 4, stride: 4, min_samples: 16 };
        let err = extract_features(
            &field,
            &spec,
            AttributeMode::MeanDirection,
            Metric::Axial,
            Some(false),
            &EntropyParams::default(),
        )
        .unwrap_err();
        assert_eq!(err, FeatureError::NoValidWindows);
    }

    #[test]
    fn standardization_default_on_for_combined() {
        let field = {
            let dims = [8, 4, 4];
            let cells: Vec<(Option<AxialDirection>, u32)> = (0..dims[0] * dims[1] * dims[2])
                .map(|i| {
                    let x = i % dims[0];
                    let dir = if x < 4 {
                        axis(1.0, 0.2, 0.1)
                    } else {
                        axis(0.1, 0.2, 1.0)
                    };
                    (Some(dir), 10)
                })
                .collect();
            DirectionField::from_cells(dims, 4, cells)
        };
        let spec = WindowSpec { window: 4, stride: 4, min_samples: 16 };
        let both = extract_features(
            &field,
            &spec,
            AttributeMode::Both,
            Metric::Axial,
            None,
            &EntropyParams::default(),
        )
        .unwrap();
        assert!(both.normalization.is_some());
        // Standardized dimensions have zero mean.
        let n = both.len() as f64;
        let mut mean = vec![0.0; both.dim()];
        for i in 0..both.len() {
            for (k, v) in both.row(i).iter().enumerate() {
                mean[k] += v / n;
            }
        }
        for m in mean {
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-9);
        }
        let single = extract_features(
            &field,
            &spec,
            AttributeMode::MeanDirection,
            Metric::Axial,
            None,
            &EntropyParams::default(),
        )
        .unwrap();
        assert!(single.normalization.is_none());
    }

    #[test]
    fn feature_csv_roundtrip() {
        let field = uniform_field([8, 8, 8], axis(0.3, 0.4, 0.86));
        let spec = WindowSpec { window: 4, stride: 4, min_samples: 16 };
        let grid = extract_features(
            &field,
            &spec,
            AttributeMode::Both,
            Metric::Axial,
            Some(false),
            &EntropyParams::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        grid.save_csv(&path).unwrap();
        let loaded = FeatureGrid::load_csv(&path).unwrap();
        assert_eq!(loaded, grid);
    }
}
