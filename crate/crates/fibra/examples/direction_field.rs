//! Estimate local fibre directions on a synthetic volume and check the
//! recovered axis against the construction.
//!
//! ```bash
//! cargo run --release --example direction_field
//! ```

use fibra::dirfield::{aggregate_to_cubes, hessian_directions};
use fibra::geometry::AxialDirection;
use fibra::volume::Volume3D;

fn main() -> anyhow::Result<()> {
    // A bright tube of radius 4 along z through the whole volume.
    let dims = [64, 64, 80];
    let radius = 4.0;
    let mut volume = Volume3D::zeros(dims);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let dx = x as f64 + 0.5 - dims[0] as f64 / 2.0;
                let dy = y as f64 + 0.5 - dims[1] as f64 / 2.0;
                if dx * dx + dy * dy <= radius * radius {
                    volume.set(x, y, z, 255);
                }
            }
        }
    }

    let voxels = hessian_directions(&volume, radius / 2.0, None)?;
    println!(
        "threshold {:.1}, {} fibre voxels",
        voxels.threshold,
        voxels.fibre_voxel_count()
    );

    let field = aggregate_to_cubes(&voxels, 4, 8)?;
    let truth = AxialDirection::from_vector(0.0, 0.0, 1.0)?;
    let mut worst: f64 = 0.0;
    let mut valid = 0;
    for cell in field.cells() {
        if let Some(dir) = cell.direction {
            valid += 1;
            worst = worst.max(dir.distance(&truth).to_degrees());
        }
    }
    println!(
        "direction grid {:?}: {valid} valid cubes, worst axis error {worst:.2} degrees",
        field.grid_dims()
    );

    let dir = std::env::temp_dir().join("fibra-dirfield-example");
    std::fs::create_dir_all(&dir)?;
    field.save_csv(&dir.join("directions.csv"))?;
    println!("wrote directions.csv under {}", dir.display());
    Ok(())
}
