//! End-to-end anomaly detection on a simulated volume, with both
//! clustering backends scored against the ground truth.
//!
//! ```bash
//! cargo run --release --example full_pipeline
//! ```

use fibra::config::{Algorithm, RunConfig};
use fibra::pipeline::{self, files};
use fibra::rsa::AnomalyRegion;

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig {
        seed: 17,
        ..RunConfig::default()
    };
    // Desk-scale domain so the example finishes in seconds.
    cfg.simulate.domain_dims = [128, 128, 128];
    cfg.simulate.radius = 2.0;
    cfg.simulate.length = 16.0;
    cfg.simulate.anomaly_region = Some(AnomalyRegion::Box {
        min: [32.0, 32.0, 32.0],
        max: [96.0, 96.0, 96.0],
    });
    cfg.directions.sigma = 1.0;
    cfg.features.window = 4;
    cfg.features.stride = 4;

    let dir = std::env::temp_dir().join("fibra-pipeline-example");

    cfg.cluster.algorithm = Algorithm::Sem;
    let sem = pipeline::pipeline_stage(&cfg, &dir.join("sem"))?;
    println!(
        "spatial SEM: {} fibres, {} windows, {} clusters, misclassification {:.4}",
        sem.simulate.fibres,
        sem.features.windows,
        sem.cluster.clusters,
        sem.report.misclassification
    );

    cfg.cluster.algorithm = Algorithm::Awc;
    let awc = pipeline::pipeline_stage(&cfg, &dir.join("awc"))?;
    println!(
        "AWC (lambda = 10 preset): {} clusters, misclassification {:.4}",
        awc.cluster.clusters, awc.report.misclassification
    );

    println!(
        "artifacts under {} (volume, CSVs, {}, {})",
        dir.display(),
        files::LABELS_VTK,
        files::FEATURES_VTK
    );
    Ok(())
}
