//! File-to-file stage runners wiring the modules into the full
//! detection pipeline.
//!
//! Every stage reads its inputs from disk and writes its outputs to
//! disk, so stages are individually re-runnable and a `pipeline` run
//! is byte-identical to running the stages one by one with the same
//! config: the pipeline itself re-reads each artifact instead of
//! passing volumes or grids in memory.

use crate::cluster::ClusterMap;
use crate::config::{Algorithm, RunConfig};
use crate::dirfield::{aggregate_to_cubes, hessian_directions, DirFieldError, DirectionField};
use crate::evaluate::{evaluate, EvalError, EvaluationReport};
use crate::features::{extract_features, FeatureError, FeatureGrid};
use crate::io_error::FileError;
use crate::rsa::{generate_rsa, ground_truth_labels, voxelize, FibreSystem, RsaError};
use crate::sem::{sem_fit, SemError};
use crate::awc::{awc_fit, AwcError};
use crate::volume::Volume3D;
use crate::vtk;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Conventional artifact names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "run.json";
    pub const VOLUME: &str = "volume.raw";
    pub const FIBRES: &str = "fibres.csv";
    pub const DIRECTIONS: &str = "directions.csv";
    pub const FEATURES: &str = "features.csv";
    pub const LABELS: &str = "labels.csv";
    pub const TRUTH: &str = "truth.csv";
    pub const MIXTURE: &str = "mixture.json";
    pub const EDGES: &str = "edges.csv";
    pub const REPORT: &str = "report.json";
    pub const LABELS_VTK: &str = "labels.vtk";
    pub const FEATURES_VTK: &str = "features.vtk";
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Rsa(#[from] RsaError),
    #[error(transparent)]
    DirField(#[from] DirFieldError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error(transparent)]
    Awc(#[from] AwcError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Input(String),
}

impl PipelineError {
    /// CLI exit status: 2 for validation problems (bad files, bad
    /// parameters), 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::File(_) | PipelineError::Input(_) => 2,
            PipelineError::Rsa(RsaError::InvalidParams(_)) => 2,
            PipelineError::DirField(DirFieldError::InvalidParams(_)) => 2,
            PipelineError::Feature(FeatureError::InvalidSpec(_)) => 2,
            PipelineError::Sem(SemError::InvalidParams(_)) => 2,
            PipelineError::Awc(AwcError::InvalidParams(_)) => 2,
            PipelineError::Eval(EvalError::GridMismatch { .. }) => 2,
            _ => 1,
        }
    }
}

pub type PipelineResult<T> = Result<T, PipelineError>;

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub fibres: usize,
    pub achieved_fraction: f64,
    pub jammed: bool,
    pub volume_path: PathBuf,
    pub fibres_path: PathBuf,
}

/// Generates the fibre system, voxelizes it and writes `volume.raw`
/// (+ sidecar) and `fibres.csv` (+ sidecar) into `dir`.
pub fn simulate_stage(cfg: &RunConfig, dir: &Path) -> PipelineResult<SimulateSummary> {
    std::fs::create_dir_all(dir).map_err(|e| FileError::io(dir, e))?;
    let system = generate_rsa(&cfg.simulate.rsa_params(cfg.seed))?;
    let volume = voxelize(&system, &cfg.simulate.voxelize_options(cfg.seed));
    let volume_path = dir.join(files::VOLUME);
    let fibres_path = dir.join(files::FIBRES);
    volume.save_raw(&volume_path)?;
    system.save_csv(&fibres_path)?;
    Ok(SimulateSummary {
        fibres: system.cylinders.len(),
        achieved_fraction: system.achieved_fraction,
        jammed: system.jammed,
        volume_path,
        fibres_path,
    })
}

#[derive(Debug, Clone)]
pub struct DirfieldSummary {
    pub threshold: f32,
    pub fibre_voxels: usize,
    pub valid_cubes: usize,
    pub grid_dims: [usize; 3],
    pub directions_path: PathBuf,
}

/// Estimates per-voxel directions from `volume.raw` and writes the
/// aggregated cube grid to `directions.csv`.
pub fn dirfield_stage(
    cfg: &RunConfig,
    volume_path: &Path,
    out_path: &Path,
) -> PipelineResult<DirfieldSummary> {
    let volume = Volume3D::load_raw(volume_path)?;
    let voxels = hessian_directions(&volume, cfg.directions.sigma, cfg.directions.threshold)?;
    let field = aggregate_to_cubes(&voxels, cfg.directions.cube_edge, cfg.directions.min_voxels)?;
    field.save_csv(out_path)?;
    Ok(DirfieldSummary {
        threshold: voxels.threshold,
        fibre_voxels: voxels.fibre_voxel_count(),
        valid_cubes: field.valid_count(),
        grid_dims: field.grid_dims(),
        directions_path: out_path.to_path_buf(),
    })
}

#[derive(Debug, Clone)]
pub struct FeaturesSummary {
    pub windows: usize,
    pub dim: usize,
    pub degenerate_windows: usize,
    pub features_path: PathBuf,
}

/// Extracts window features from `directions.csv` into `features.csv`.
pub fn features_stage(
    cfg: &RunConfig,
    directions_path: &Path,
    out_path: &Path,
) -> PipelineResult<FeaturesSummary> {
    let field = DirectionField::load_csv(directions_path)?;
    let grid = extract_features(
        &field,
        &cfg.features.window_spec(),
        cfg.features.mode,
        cfg.features.metric,
        cfg.features.standardize,
        &cfg.features.entropy,
    )?;
    grid.save_csv(out_path)?;
    Ok(FeaturesSummary {
        windows: grid.len(),
        dim: grid.dim(),
        degenerate_windows: grid.degenerate_windows,
        features_path: out_path.to_path_buf(),
    })
}

#[derive(Debug, Clone)]
pub struct ClusterSummary {
    pub algorithm: Algorithm,
    pub clusters: usize,
    pub anomaly_windows: usize,
    pub labels_path: PathBuf,
    /// `mixture.json` for SEM, `edges.csv` for AWC.
    pub aux_path: PathBuf,
}

/// Clusters `features.csv` with the spatial SEM and writes
/// `labels.csv` plus `mixture.json`.
pub fn cluster_sem_stage(
    cfg: &RunConfig,
    features_path: &Path,
    labels_path: &Path,
    mixture_path: &Path,
) -> PipelineResult<ClusterSummary> {
    let grid = FeatureGrid::load_csv(features_path)?;
    let fit = sem_fit(&grid, &cfg.cluster.sem.params(cfg.seed))?;
    fit.cluster_map.save_csv(labels_path)?;
    fit.save_mixture_json(mixture_path)?;
    Ok(ClusterSummary {
        algorithm: Algorithm::Sem,
        clusters: fit.cluster_map.cluster_count(),
        anomaly_windows: fit.cluster_map.anomaly_mask().iter().filter(|&&a| a).count(),
        labels_path: labels_path.to_path_buf(),
        aux_path: mixture_path.to_path_buf(),
    })
}

/// Clusters `features.csv` with AWC and writes `labels.csv` plus the
/// final weight-graph edge list.
pub fn cluster_awc_stage(
    cfg: &RunConfig,
    features_path: &Path,
    labels_path: &Path,
    edges_path: &Path,
) -> PipelineResult<ClusterSummary> {
    let grid = FeatureGrid::load_csv(features_path)?;
    let fit = awc_fit(&grid, &cfg.cluster.awc.params(grid.mode))?;
    fit.cluster_map.save_csv(labels_path)?;
    fit.weights.save_edges_csv(edges_path)?;
    Ok(ClusterSummary {
        algorithm: Algorithm::Awc,
        clusters: fit.cluster_map.cluster_count(),
        anomaly_windows: fit.cluster_map.anomaly_mask().iter().filter(|&&a| a).count(),
        labels_path: labels_path.to_path_buf(),
        aux_path: edges_path.to_path_buf(),
    })
}

/// Where the ground truth for evaluation comes from.
pub enum TruthSource<'a> {
    /// A label CSV written earlier.
    Labels(&'a Path),
    /// Derive labels from the simulated fibre system; the feature CSV
    /// supplies the window geometry.
    Fibres {
        fibres: &'a Path,
        features: &'a Path,
    },
}

/// Scores a prediction and writes `report.json`.
pub fn evaluate_stage(
    pred_path: &Path,
    truth: TruthSource<'_>,
    report_path: &Path,
) -> PipelineResult<EvaluationReport> {
    let pred = ClusterMap::load_csv(pred_path)?;
    let truth_map = match truth {
        TruthSource::Labels(path) => ClusterMap::load_csv(path)?,
        TruthSource::Fibres { fibres, features } => {
            let system = FibreSystem::load_csv(fibres)?;
            let grid = FeatureGrid::load_csv(features)?;
            let full = ground_truth_labels(&system, grid.cube_edge, &grid.window_spec);
            full.restrict_to(&pred.positions).ok_or_else(|| {
                PipelineError::Input(format!(
                    "prediction {} contains windows outside the simulated grid",
                    pred_path.display()
                ))
            })?
        }
    };
    let report = evaluate(&pred, &truth_map)?;
    report.save_json(report_path)?;
    Ok(report)
}

/// What to render into a VTK structured-points file.
pub enum VtkInput<'a> {
    Labels {
        labels: &'a Path,
        cube_edge: usize,
        stride: usize,
        window: usize,
    },
    Features(&'a Path),
}

/// Exports a grid artifact as legacy VTK.
pub fn export_vtk_stage(input: VtkInput<'_>, out_path: &Path) -> PipelineResult<()> {
    match input {
        VtkInput::Labels {
            labels,
            cube_edge,
            stride,
            window,
        } => {
            let map = ClusterMap::load_csv(labels)?;
            vtk::export_labels_vtk(out_path, &map, cube_edge, stride, window)?;
        }
        VtkInput::Features(path) => {
            let grid = FeatureGrid::load_csv(path)?;
            vtk::export_features_vtk(out_path, &grid)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub simulate: SimulateSummary,
    pub dirfield: DirfieldSummary,
    pub features: FeaturesSummary,
    pub cluster: ClusterSummary,
    pub report: EvaluationReport,
    pub report_path: PathBuf,
}

/// Runs every stage in order inside `dir`, re-reading each artifact
/// from disk, then evaluates against the simulated ground truth and
/// emits VTK exports.
pub fn pipeline_stage(cfg: &RunConfig, dir: &Path) -> PipelineResult<PipelineSummary> {
    let simulate = simulate_stage(cfg, dir)?;
    let dirfield = dirfield_stage(cfg, &simulate.volume_path, &dir.join(files::DIRECTIONS))?;
    let features = features_stage(cfg, &dirfield.directions_path, &dir.join(files::FEATURES))?;
    let labels_path = dir.join(files::LABELS);
    let cluster = match cfg.cluster.algorithm {
        Algorithm::Sem => cluster_sem_stage(
            cfg,
            &features.features_path,
            &labels_path,
            &dir.join(files::MIXTURE),
        )?,
        Algorithm::Awc => cluster_awc_stage(
            cfg,
            &features.features_path,
            &labels_path,
            &dir.join(files::EDGES),
        )?,
    };

    // Ground truth on the predicted window grid, persisted next to the
    // prediction.
    let system = FibreSystem::load_csv(&simulate.fibres_path)?;
    let grid = FeatureGrid::load_csv(&features.features_path)?;
    let pred = ClusterMap::load_csv(&cluster.labels_path)?;
    let truth_full = ground_truth_labels(&system, grid.cube_edge, &grid.window_spec);
    let truth = truth_full.restrict_to(&pred.positions).ok_or_else(|| {
        PipelineError::Input("prediction contains windows outside the simulated grid".into())
    })?;
    let truth_path = dir.join(files::TRUTH);
    truth.save_csv(&truth_path)?;

    let report_path = dir.join(files::REPORT);
    let report = evaluate_stage(
        &cluster.labels_path,
        TruthSource::Labels(&truth_path),
        &report_path,
    )?;

    export_vtk_stage(
        VtkInput::Labels {
            labels: &cluster.labels_path,
            cube_edge: cfg.directions.cube_edge,
            stride: cfg.features.stride,
            window: cfg.features.window,
        },
        &dir.join(files::LABELS_VTK),
    )?;
    export_vtk_stage(
        VtkInput::Features(&features.features_path),
        &dir.join(files::FEATURES_VTK),
    )?;

    Ok(PipelineSummary {
        simulate,
        dirfield,
        features,
        cluster,
        report,
        report_path,
    })
}
