//! Command-line front end: each subcommand runs one pipeline stage on
//! files, `pipeline` chains them all from a single config.

use clap::{Args, Parser, Subcommand};
use fibra::config::RunConfig;
use fibra::features::AttributeMode;
use fibra::pipeline::{self, files, PipelineError, TruthSource, VtkInput};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fibra",
    about = "Anomaly detection in 3D fibre-material images",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run config JSON; omitted fields fall back to defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a fibre system and render it to a grayscale volume.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for volume.raw and fibres.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the per-cube direction field of a volume.
    Dirfield {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input volume (.raw with .json sidecar).
        #[arg(long)]
        volume: PathBuf,
        /// Output direction CSV.
        #[arg(long)]
        out: PathBuf,
        /// Smoothing scale in voxels.
        #[arg(long)]
        sigma: Option<f64>,
        /// Cube edge in voxels.
        #[arg(long)]
        cube_edge: Option<usize>,
        /// Fixed gray threshold (default: Otsu).
        #[arg(long)]
        threshold: Option<f32>,
    },
    /// Compute window features from a direction field.
    Features {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input direction CSV.
        #[arg(long)]
        directions: PathBuf,
        /// Output feature CSV.
        #[arg(long)]
        out: PathBuf,
        /// Attribute mode: entropy, mean-direction or both.
        #[arg(long)]
        mode: Option<String>,
        /// Window edge in cubes.
        #[arg(long)]
        window: Option<usize>,
        /// Window stride in cubes.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Cluster window features with the spatial SEM.
    ClusterSem {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        features: PathBuf,
        /// Output label CSV.
        #[arg(long)]
        out: PathBuf,
        /// Output mixture JSON (default: mixture.json next to labels).
        #[arg(long)]
        mixture: Option<PathBuf>,
        /// Spatial coupling strength.
        #[arg(long)]
        beta: Option<f64>,
        /// Initial class count.
        #[arg(long)]
        k_init: Option<usize>,
    },
    /// Cluster window features with adaptive weights clustering.
    ClusterAwc {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        features: PathBuf,
        /// Output label CSV.
        #[arg(long)]
        out: PathBuf,
        /// Output edge-list CSV (default: edges.csv next to labels).
        #[arg(long)]
        edges: Option<PathBuf>,
        /// Gate parameter; default is the published preset for the
        /// attribute mode.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Score predicted labels against ground truth.
    Evaluate {
        /// Predicted label CSV.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth label CSV.
        #[arg(long, conflicts_with_all = ["fibres", "features"])]
        truth: Option<PathBuf>,
        /// Simulated fibre CSV to derive ground truth from.
        #[arg(long, requires = "features")]
        fibres: Option<PathBuf>,
        /// Feature CSV supplying the window geometry (with --fibres).
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output report JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a label or feature grid as legacy VTK structured points.
    ExportVtk {
        /// Label CSV to export.
        #[arg(long, conflicts_with = "features")]
        labels: Option<PathBuf>,
        /// Feature CSV to export.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Cube edge in voxels (labels only; sets the spacing).
        #[arg(long, default_value_t = 1)]
        cube_edge: usize,
        /// Window stride in cubes (labels only).
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Window edge in cubes (labels only; sets the origin).
        #[arg(long, default_value_t = 0)]
        window: usize,
        /// Output VTK file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run simulate, dirfield, features, clustering, evaluation and
    /// VTK export in one go.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory receiving every artifact.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<AttributeMode, PipelineError> {
    match s {
        "entropy" => Ok(AttributeMode::Entropy),
        "mean-direction" => Ok(AttributeMode::MeanDirection),
        "both" => Ok(AttributeMode::Both),
        other => Err(PipelineError::Input(format!(
            "unknown attribute mode '{other}' (expected entropy, mean-direction or both)"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = config.load()?;
            let s = pipeline::simulate_stage(&cfg, &out)?;
            println!(
                "simulate: {} fibres, solid fraction {:.4}{} -> {}",
                s.fibres,
                s.achieved_fraction,
                if s.jammed { " (jammed early)" } else { "" },
                s.volume_path.display()
            );
        }
        Command::Dirfield {
            config,
            volume,
            out,
            sigma,
            cube_edge,
            threshold,
        } => {
            let mut cfg = config.load()?;
            if let Some(s) = sigma {
                cfg.directions.sigma = s;
            }
            if let Some(c) = cube_edge {
                cfg.directions.cube_edge = c;
            }
            if threshold.is_some() {
                cfg.directions.threshold = threshold;
            }
            let s = pipeline::dirfield_stage(&cfg, &volume, &out)?;
            println!(
                "dirfield: threshold {:.1}, {} fibre voxels, {}/{} valid cubes -> {}",
                s.threshold,
                s.fibre_voxels,
                s.valid_cubes,
                s.grid_dims.iter().product::<usize>(),
                s.directions_path.display()
            );
        }
        Command::Features {
            config,
            directions,
            out,
            mode,
            window,
            stride,
        } => {
            let mut cfg = config.load()?;
            if let Some(m) = mode.as_deref() {
                cfg.features.mode = parse_mode(m)?;
            }
            if let Some(w) = window {
                cfg.features.window = w;
            }
            if let Some(s) = stride {
                cfg.features.stride = s;
            }
            let s = pipeline::features_stage(&cfg, &directions, &out)?;
            println!(
                "features: {} windows (dim {}), {} degenerate -> {}",
                s.windows,
                s.dim,
                s.degenerate_windows,
                s.features_path.display()
            );
        }
        Command::ClusterSem {
            config,
            features,
            out,
            mixture,
            beta,
            k_init,
        } => {
            let mut cfg = config.load()?;
            if let Some(b) = beta {
                cfg.cluster.sem.beta = b;
            }
            if let Some(k) = k_init {
                cfg.cluster.sem.k_init = k;
            }
            let mixture =
                mixture.unwrap_or_else(|| out.with_file_name(files::MIXTURE));
            let s = pipeline::cluster_sem_stage(&cfg, &features, &out, &mixture)?;
            println!(
                "cluster-sem: {} clusters, {} anomaly windows -> {}",
                s.clusters,
                s.anomaly_windows,
                s.labels_path.display()
            );
        }
        Command::ClusterAwc {
            config,
            features,
            out,
            edges,
            lambda,
        } => {
            let mut cfg = config.load()?;
            if lambda.is_some() {
                cfg.cluster.awc.lambda = lambda;
            }
            let edges = edges.unwrap_or_else(|| out.with_file_name(files::EDGES));
            let s = pipeline::cluster_awc_stage(&cfg, &features, &out, &edges)?;
            println!(
                "cluster-awc: {} clusters, {} anomaly windows -> {}",
                s.clusters,
                s.anomaly_windows,
                s.labels_path.display()
            );
        }
        Command::Evaluate {
            pred,
            truth,
            fibres,
            features,
            out,
        } => {
            let source = match (&truth, &fibres, &features) {
                (Some(t), None, _) => TruthSource::Labels(t),
                (None, Some(f), Some(feat)) => TruthSource::Fibres {
                    fibres: f,
                    features: feat,
                },
                _ => {
                    return Err(PipelineError::Input(
                        "evaluate needs either --truth or --fibres with --features".into(),
                    ))
                }
            };
            let report = pipeline::evaluate_stage(&pred, source, &out)?;
            println!(
                "evaluate: misclassification {:.4}, rand index {:.4}, {} clusters -> {}",
                report.misclassification,
                report.rand_index,
                report.cluster_count,
                out.display()
            );
        }
        Command::ExportVtk {
            labels,
            features,
            cube_edge,
            stride,
            window,
            out,
        } => {
            let input = match (&labels, &features) {
                (Some(l), None) => VtkInput::Labels {
                    labels: l,
                    cube_edge,
                    stride,
                    window,
                },
                (None, Some(f)) => VtkInput::Features(f),
                _ => {
                    return Err(PipelineError::Input(
                        "export-vtk needs exactly one of --labels or --features".into(),
                    ))
                }
            };
            pipeline::export_vtk_stage(input, &out)?;
            println!("export-vtk: wrote {}", out.display());
        }
        Command::Pipeline { config, out } => {
            let cfg = config.load()?;
            let s = pipeline::pipeline_stage(&cfg, &out)?;
            println!(
                "pipeline: {} fibres, {} windows, {} clusters, misclassification {:.4} -> {}",
                s.simulate.fibres,
                s.features.windows,
                s.cluster.clusters,
                s.report.misclassification,
                s.report_path.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    fibra::configure_threads_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
