//! Simulate a layered-RSA fibre system with a central anomaly region,
//! render it to a grayscale volume and export everything to disk.
//!
//! ```bash
//! cargo run --release --example simulate_fibres
//! ```

use fibra::rsa::{generate_rsa, voxelize, AnomalyRegion, DirectionDistribution, RsaParams, VoxelizeOptions};

fn main() -> anyhow::Result<()> {
    let params = RsaParams {
        domain_dims: [128, 128, 128],
        radius: 2.0,
        length: 20.0,
        volume_fraction: 0.12,
        // Bulk fibres along x, anomaly fibres along z inside a ball.
        normal_dir: DirectionDistribution::new([1.0, 0.0, 0.0], 100.0),
        anomaly_dir: DirectionDistribution::new([0.0, 0.0, 1.0], 100.0),
        anomaly_region: Some(AnomalyRegion::Ball {
            center: [64.0, 64.0, 64.0],
            radius: 28.0,
        }),
        seed: 42,
        ..RsaParams::default()
    };
    let system = generate_rsa(&params)?;
    let anomaly_count = system
        .cylinders
        .iter()
        .filter(|c| system.is_anomaly_fibre(c))
        .count();
    println!(
        "placed {} fibres ({} in the anomaly region), solid fraction {:.4}{}",
        system.cylinders.len(),
        anomaly_count,
        system.achieved_fraction,
        if system.jammed { " [jammed early]" } else { "" }
    );

    let volume = voxelize(
        &system,
        &VoxelizeOptions {
            blur_sigma: 1.0,
            noise_sigma: 10.0,
            seed: 42,
        },
    );
    let bright = volume.voxels().iter().filter(|&&v| v > 128).count();
    println!(
        "rendered {}x{}x{} volume, {:.2}% bright voxels",
        volume.dims()[0],
        volume.dims()[1],
        volume.dims()[2],
        100.0 * bright as f64 / volume.len() as f64
    );

    let dir = std::env::temp_dir().join("fibra-simulate-example");
    std::fs::create_dir_all(&dir)?;
    volume.save_raw(&dir.join("volume.raw"))?;
    system.save_csv(&dir.join("fibres.csv"))?;
    println!("wrote volume.raw / fibres.csv under {}", dir.display());
    Ok(())
}
