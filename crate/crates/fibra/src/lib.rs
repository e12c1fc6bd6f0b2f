//! Detection of anomaly regions in 3D grayscale fibre-material images.
//!
//! The pipeline follows four stages, each usable on its own:
//!
//! 1. [`rsa`] — simulate a fibre system by layered random sequential
//!    adsorption and render it to a grayscale volume (ground truth for
//!    validation), or load a real volume from disk.
//! 2. [`dirfield`] — estimate local fibre axes by Hessian eigenanalysis
//!    and aggregate them to a coarse cube grid.
//! 3. [`features`] — scan the cube grid with windows and compute the
//!    clustering attributes: mean local direction and nearest-neighbour
//!    directional entropy.
//! 4. [`sem`] / [`awc`] — cluster the windows into anomaly and normal
//!    material (plus possible artefact clusters for AWC).
//!
//! [`evaluate`] scores predictions against ground truth and [`vtk`]
//! exports grids for volume viewers. The `fibra` binary wires the
//! stages into a reproducible pipeline; each capability also has a
//! runnable example under `examples/`.

pub mod awc;
pub mod cluster;
pub mod config;
pub mod dirfield;
pub mod evaluate;
pub mod features;
pub mod geometry;
pub mod io_error;
pub mod pipeline;
pub mod rsa;
pub mod sem;
pub mod vtk;
pub mod volume;

pub use cluster::ClusterMap;
pub use dirfield::{aggregate_to_cubes, hessian_directions, DirectionField};
pub use features::{extract_features, mean_direction, nn_entropy, AttributeMode, FeatureGrid, WindowSpec};
pub use geometry::{geodesic_distance, AxialDirection, Metric, UnitVector};
pub use rsa::{generate_rsa, ground_truth_labels, voxelize, FibreSystem, RsaParams};
pub use volume::Volume3D;

/// Caps the global rayon thread pool from the `FIBRA_THREADS`
/// environment variable. No-op when the variable is unset, invalid, or
/// the pool was already initialized.
pub fn configure_threads_from_env() {
    if let Ok(value) = std::env::var("FIBRA_THREADS") {
        if let Ok(n) = value.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
