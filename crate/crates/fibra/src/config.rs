//! Run manifest: one JSON document with a section per pipeline stage.
//!
//! Every field has a default, so `{}` is a valid config describing the
//! desk-scale simulation scenario. The top-level `seed` drives every
//! stochastic stage; per-stage seeds derive from it (simulation uses
//! `seed`, imaging noise `seed + 1`, SEM `seed + 2`) so one number
//! reproduces a whole run.

use crate::awc::{preset_lambda, AwcParams, LambdaPreset};
use crate::features::{AttributeMode, EntropyParams, WindowSpec};
use crate::geometry::Metric;
use crate::io_error::{FileError, FileResult};
use crate::rsa::{AnomalyRegion, DirectionDistribution, RsaParams, VoxelizeOptions};
use crate::sem::SemParams;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed for the whole run.
    pub seed: u64,
    pub simulate: SimulateStage,
    pub directions: DirectionsStage,
    pub features: FeaturesStage,
    pub cluster: ClusterStage,
}

impl RunConfig {
    pub fn load(path: &Path) -> FileResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            FileError::malformed(path, Some(e.line()), e.to_string())
        })
    }

    pub fn save(&self, path: &Path) -> FileResult<()> {
        std::fs::write(
            path,
            serde_json::to_string_pretty(self).expect("config serializes"),
        )
        .map_err(|e| FileError::io(path, e))
    }
}

/// Fibre simulation plus imaging (blur/noise) parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateStage {
    pub domain_dims: [usize; 3],
    pub radius: f64,
    pub length: f64,
    pub volume_fraction: f64,
    pub max_attempts: usize,
    pub normal_dir: DirectionDistribution,
    pub anomaly_dir: DirectionDistribution,
    pub anomaly_region: Option<AnomalyRegion>,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

impl Default for SimulateStage {
    fn default() -> Self {
        let rsa = RsaParams::default();
        let imaging = VoxelizeOptions::default();
        Self {
            domain_dims: rsa.domain_dims,
            radius: rsa.radius,
            length: rsa.length,
            volume_fraction: rsa.volume_fraction,
            max_attempts: rsa.max_attempts,
            normal_dir: rsa.normal_dir,
            anomaly_dir: rsa.anomaly_dir,
            anomaly_region: rsa.anomaly_region,
            blur_sigma: imaging.blur_sigma,
            noise_sigma: imaging.noise_sigma,
        }
    }
}

impl SimulateStage {
    pub fn rsa_params(&self, seed: u64) -> RsaParams {
        RsaParams {
            domain_dims: self.domain_dims,
            radius: self.radius,
            length: self.length,
            volume_fraction: self.volume_fraction,
            max_attempts: self.max_attempts,
            normal_dir: self.normal_dir.clone(),
            anomaly_dir: self.anomaly_dir.clone(),
            anomaly_region: self.anomaly_region.clone(),
            seed,
        }
    }

    pub fn voxelize_options(&self, seed: u64) -> VoxelizeOptions {
        VoxelizeOptions {
            blur_sigma: self.blur_sigma,
            noise_sigma: self.noise_sigma,
            seed: seed.wrapping_add(1),
        }
    }
}

/// Hessian direction estimation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectionsStage {
    /// Gaussian smoothing scale in voxels; fibre radius / 2 works well.
    pub sigma: f64,
    /// Fixed gray threshold; `null` applies Otsu's rule.
    pub threshold: Option<f32>,
    pub cube_edge: usize,
    pub min_voxels: usize,
}

impl Default for DirectionsStage {
    fn default() -> Self {
        Self {
            sigma: 1.25,
            threshold: None,
            cube_edge: 4,
            min_voxels: crate::dirfield::DEFAULT_MIN_VOXELS,
        }
    }
}

/// Window feature extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturesStage {
    pub window: usize,
    pub stride: usize,
    pub min_samples: usize,
    pub mode: AttributeMode,
    pub metric: Metric,
    /// `null` applies the default: on for the combined mode, off
    /// otherwise.
    pub standardize: Option<bool>,
    pub entropy: EntropyParams,
}

impl Default for FeaturesStage {
    fn default() -> Self {
        let spec = WindowSpec::default();
        Self {
            window: spec.window,
            stride: spec.stride,
            min_samples: spec.min_samples,
            mode: AttributeMode::MeanDirection,
            metric: Metric::Axial,
            standardize: None,
            entropy: EntropyParams::default(),
        }
    }
}

impl FeaturesStage {
    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            window: self.window,
            stride: self.stride,
            min_samples: self.min_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sem,
    Awc,
}

/// Clustering stage: which algorithm plus both parameter sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterStage {
    pub algorithm: Algorithm,
    pub sem: SemStage,
    pub awc: AwcStage,
}

impl Default for ClusterStage {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sem,
            sem: SemStage::default(),
            awc: AwcStage::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemStage {
    pub k_init: usize,
    pub max_iterations: usize,
    pub beta: f64,
    pub epsilon_label: f64,
    pub restarts: usize,
    pub prune_min: Option<usize>,
}

impl Default for SemStage {
    fn default() -> Self {
        let p = SemParams::default();
        Self {
            k_init: p.k_init,
            max_iterations: p.max_iterations,
            beta: p.beta,
            epsilon_label: p.epsilon_label,
            restarts: p.restarts,
            prune_min: p.prune_min,
        }
    }
}

impl SemStage {
    pub fn params(&self, seed: u64) -> SemParams {
        SemParams {
            k_init: self.k_init,
            max_iterations: self.max_iterations,
            beta: self.beta,
            epsilon_label: self.epsilon_label,
            restarts: self.restarts,
            seed: seed.wrapping_add(2),
            prune_min: self.prune_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AwcStage {
    /// Explicit gate value; `null` picks the published preset for the
    /// attribute mode and dataset kind.
    pub lambda: Option<f64>,
    pub preset: LambdaPreset,
    pub n0: Option<usize>,
    pub growth: f64,
    pub max_steps: usize,
}

impl Default for AwcStage {
    fn default() -> Self {
        let p = AwcParams::default();
        Self {
            lambda: None,
            preset: LambdaPreset::Rsa,
            n0: p.n0,
            growth: p.growth,
            max_steps: p.max_steps,
        }
    }
}

impl AwcStage {
    pub fn params(&self, mode: AttributeMode) -> AwcParams {
        AwcParams {
            lambda: self.lambda.unwrap_or_else(|| preset_lambda(mode, self.preset)),
            n0: self.n0,
            growth: self.growth,
            max_steps: self.max_steps,
        }
    }
}
