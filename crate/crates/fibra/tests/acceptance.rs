//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured numbers (run with `--nocapture` to see them).

use fibra::awc::{awc_fit, ball_overlap_q, AwcParams};
use fibra::cluster::ClusterMap;
use fibra::config::{Algorithm, RunConfig};
use fibra::dirfield::hessian_directions;
use fibra::features::{
    mean_direction, nn_entropy, AttributeMode, FeatureGrid, FeatureVector, WindowSpec,
};
use fibra::geometry::{geodesic_distance, AxialDirection, Metric, UnitVector};
use fibra::pipeline;
use fibra::rsa::{generate_rsa, sample_vmf, segment_distance, RsaParams};
use fibra::sem::{sem_fit, sem_fit_classical, SemParams};
use fibra::volume::Volume3D;
use fibra::vtk;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::Instant;

fn pass(criterion: &str, details: String) {
    println!("acceptance {criterion}: PASS ({details})");
}

/// Criterion 1: end-to-end simulated reproduction with the spatial SEM
/// on the mean-direction attribute, 200x200x300 volume, central box
/// anomaly with the mean fibre axis orthogonal to the bulk;
/// misclassification <= 2% over 3 seeds within a 10 minute budget.
#[test]
fn criterion_1_end_to_end_sem() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 1..=3u64 {
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        assert_eq!(cfg.cluster.algorithm, Algorithm::Sem);
        let dir = tempfile::tempdir().unwrap();
        let summary = pipeline::pipeline_stage(&cfg, dir.path()).unwrap();
        assert!(!summary.simulate.jammed, "seed {seed} jammed");
        let err = summary.report.misclassification;
        assert!(
            err <= 0.02,
            "seed {seed}: misclassification {err:.4} above 2%"
        );
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() <= 600,
        "runtime {elapsed:?} exceeds 10 minutes"
    );
    pass(
        "criterion 1 (SEM end-to-end)",
        format!("worst misclassification {worst:.4} over 3 seeds in {elapsed:.1?}"),
    );
}

/// Criterion 2: same pipeline with AWC. Mean-direction attribute at
/// the published lambda = 10 preset must stay within 5% after label
/// matching; the entropy attribute (on the raised-dispersion preset,
/// since entropy is blind to a pure axis rotation) must be tolerated
/// with >= 2 clusters and its cluster count reported.
#[test]
fn criterion_2_end_to_end_awc() {
    let mut worst = 0.0f64;
    for seed in 1..=3u64 {
        let mut cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        cfg.cluster.algorithm = Algorithm::Awc;
        assert_eq!(
            cfg.cluster.awc.params(AttributeMode::MeanDirection).lambda,
            10.0
        );
        let dir = tempfile::tempdir().unwrap();
        let summary = pipeline::pipeline_stage(&cfg, dir.path()).unwrap();
        let err = summary.report.misclassification;
        assert!(
            err <= 0.05,
            "seed {seed}: AWC misclassification {err:.4} above 5%"
        );
        worst = worst.max(err);
    }

    // Entropy attribute on a dispersion anomaly.
    let mut cfg = RunConfig {
        seed: 1,
        ..RunConfig::default()
    };
    cfg.simulate.anomaly_dir = fibra::rsa::DirectionDistribution::new([1.0, 0.0, 0.0], 2.0);
    cfg.features.mode = AttributeMode::Entropy;
    cfg.cluster.algorithm = Algorithm::Awc;
    assert_eq!(cfg.cluster.awc.params(AttributeMode::Entropy).lambda, 9.2);
    let dir = tempfile::tempdir().unwrap();
    let summary = pipeline::pipeline_stage(&cfg, dir.path()).unwrap();
    let clusters = summary.cluster.clusters;
    assert!(
        clusters >= 2,
        "entropy attribute found {clusters} cluster(s)"
    );
    pass(
        "criterion 2 (AWC end-to-end)",
        format!(
            "worst mean-direction misclassification {worst:.4}; entropy attribute reported {clusters} clusters (>= 2 tolerated)"
        ),
    );
}

/// Criterion 3: entropy estimator consistency. Mean estimate over 50
/// replications of N = 1000 uniform directions within +-0.05 of
/// ln(4 pi) (spherical) and ln(2 pi) (axial); the N = 2 plug-in value
/// at rho = 1 rad reproduces 1.7219 to 1e-12.
#[test]
fn criterion_3_entropy_consistency() {
    let n = 1000;
    let reps = 50;
    let mut means = Vec::new();
    for (metric, target) in [
        (Metric::Spherical, (4.0 * PI).ln()),
        (Metric::Axial, (2.0 * PI).ln()),
    ] {
        let mut sum = 0.0;
        for rep in 0..reps {
            let mut rng = StdRng::seed_from_u64(31_000 + rep);
            let dirs: Vec<UnitVector> = (0..n)
                .map(|_| sample_vmf(&mut rng, [0.0, 0.0, 1.0], 0.0))
                .collect();
            sum += nn_entropy(&dirs, metric).unwrap().value;
        }
        let mean = sum / reps as f64;
        assert!(
            (mean - target).abs() <= 0.05,
            "{metric:?}: mean {mean:.4} vs target {target:.4}"
        );
        means.push((metric, mean, target));
    }

    let a = UnitVector::new(0.0, 0.0, 1.0).unwrap();
    let b = UnitVector::new(1.0f64.sin(), 0.0, 1.0f64.cos()).unwrap();
    let plugin = nn_entropy(&[a, b], Metric::Spherical).unwrap().value;
    assert!(
        (plugin - 1.7219).abs() <= 1e-12,
        "plug-in value {plugin:.13} vs 1.7219"
    );
    pass(
        "criterion 3 (entropy estimator)",
        format!(
            "spherical {:.4} vs {:.4}, axial {:.4} vs {:.4}, N=2 plug-in {plugin:.13}",
            means[0].1, means[0].2, means[1].1, means[1].2
        ),
    );
}

fn bimodal_grid(seed: u64) -> (FeatureGrid, Vec<bool>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let n = 1000usize;
    let side = 10usize;
    let mut features = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let low = i % 2 == 0;
        let mean = if low { 0.0 } else { 5.0 };
        features.push(FeatureVector {
            pos: [i % side, (i / side) % side, i / (side * side)],
            n: 16,
            entropy: Some(mean + noise.sample(&mut rng)),
            mean_dir: None,
        });
        truth.push(low);
    }
    (
        FeatureGrid {
            grid_dims: [side, side, side],
            mode: AttributeMode::Entropy,
            window_spec: WindowSpec::default(),
            cube_edge: 4,
            features,
            normalization: None,
            degenerate_windows: 0,
        },
        truth,
    )
}

/// Criterion 4: SEM oracle on the 1D two-Gaussian mixture (means 0 and
/// 5, sigma 1, n = 1000, k_init = 10): recovered means within 0.3 and
/// misassignment <= 2% over 5 seeds; beta = 0 output identical to the
/// non-spatial SEM with the same seed.
#[test]
fn criterion_4_sem_oracle() {
    let mut worst_mean_err = 0.0f64;
    let mut worst_assign = 0.0f64;
    for seed in 0..5u64 {
        let (grid, truth) = bimodal_grid(41_000 + seed);
        let params = SemParams {
            seed,
            ..SemParams::default()
        };
        assert_eq!(params.k_init, 10);
        let fit = sem_fit(&grid, &params).unwrap();
        let mut means: Vec<f64> = fit.components.iter().map(|c| c.mean[0]).collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(means.len(), 2, "seed {seed}: {} components", means.len());
        let mean_err = (means[0] - 0.0).abs().max((means[1] - 5.0).abs());
        assert!(mean_err <= 0.3, "seed {seed}: mean error {mean_err:.3}");
        let direct = fit
            .cluster_map
            .labels
            .iter()
            .zip(&truth)
            .filter(|(&l, &t)| (l == 0) != t)
            .count();
        let err = direct.min(truth.len() - direct) as f64 / truth.len() as f64;
        assert!(err <= 0.02, "seed {seed}: misassignment {err:.4}");
        worst_mean_err = worst_mean_err.max(mean_err);
        worst_assign = worst_assign.max(err);
    }

    let (grid, _) = bimodal_grid(999);
    let params = SemParams {
        beta: 0.0,
        seed: 7,
        ..SemParams::default()
    };
    let spatial = sem_fit(&grid, &params).unwrap();
    let classical = sem_fit_classical(&grid, &params).unwrap();
    assert_eq!(spatial.cluster_map, classical.cluster_map);
    assert_eq!(spatial.log_likelihood, classical.log_likelihood);
    pass(
        "criterion 4 (SEM oracle)",
        format!(
            "worst mean error {worst_mean_err:.3}, worst misassignment {worst_assign:.4}, beta=0 identical to classical SEM"
        ),
    );
}

/// Criterion 5: AWC unit oracles. Overlap endpoints q(0) = 1 and
/// q(2) = 0, the d = 1 value q(1) = 1/3 exact, the d = 3 curve against
/// the closed-form sphere intersection to 1e-9, and two 20-sigma
/// separated blobs in R^3 recovered with zero errors.
#[test]
fn criterion_5_awc_oracles() {
    for d in [1usize, 2, 3, 4] {
        assert_eq!(ball_overlap_q(0.0, d), 1.0);
        assert_eq!(ball_overlap_q(2.0, d), 0.0);
    }
    assert_eq!(ball_overlap_q(1.0, 1), 1.0 / 3.0);

    let mut max_dev = 0.0f64;
    for i in 0..=1000 {
        let t = 2.0 * i as f64 / 1000.0;
        let h = 1.0;
        let s = t * h;
        let v = 4.0 / 3.0 * PI;
        let v_and = PI * (4.0 * h + s) * (2.0 * h - s) * (2.0 * h - s) / 12.0;
        let expected = v_and / (2.0 * v - v_and);
        let dev = (ball_overlap_q(t, 3) - expected).abs();
        max_dev = max_dev.max(dev);
    }
    assert!(max_dev <= 1e-9, "d=3 deviation {max_dev:e}");

    let mut rng = StdRng::seed_from_u64(5);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows: Vec<[f64; 3]> = (0..120)
        .map(|_| [noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)])
        .collect();
    rows.extend((0..80).map(|_| {
        [
            20.0 + noise.sample(&mut rng),
            noise.sample(&mut rng),
            noise.sample(&mut rng),
        ]
    }));
    let side = (rows.len() as f64).cbrt().ceil() as usize;
    let grid = FeatureGrid {
        grid_dims: [side; 3],
        mode: AttributeMode::MeanDirection,
        window_spec: WindowSpec::default(),
        cube_edge: 4,
        features: rows
            .iter()
            .enumerate()
            .map(|(i, &m)| FeatureVector {
                pos: [i % side, (i / side) % side, i / (side * side)],
                n: 16,
                entropy: None,
                mean_dir: Some(m),
            })
            .collect(),
        normalization: None,
        degenerate_windows: 0,
    };
    let fit = awc_fit(&grid, &AwcParams { lambda: 8.0, ..AwcParams::default() }).unwrap();
    assert_eq!(fit.cluster_map.cluster_count(), 2);
    let errors = fit
        .cluster_map
        .labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| (l == 0) != (*i < 120))
        .count();
    assert_eq!(errors, 0);
    pass(
        "criterion 5 (AWC oracles)",
        format!("q(1,d=1) exact, d=3 curve within {max_dev:.1e}, 20-sigma blobs: 2 clusters, 0 errors"),
    );
}

/// Criterion 6: direction-field oracle. On a synthetic bright cylinder
/// at least 95% of interior fibre voxels lie within 5 degrees (axial)
/// of the true axis, and a 90-degree volume rotation rotates the
/// estimates accordingly (same 5-degree bound).
#[test]
fn criterion_6_direction_field() {
    let dims = [48, 48, 64];
    let radius = 4.0;
    let mut vol = Volume3D::zeros(dims);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let dx = x as f64 + 0.5 - 24.0;
                let dy = y as f64 + 0.5 - 24.0;
                if dx * dx + dy * dy <= radius * radius {
                    vol.set(x, y, z, 255);
                }
            }
        }
    }
    let accuracy = |vol: &Volume3D, axis: [f64; 3], tube: char| -> f64 {
        let voxels = hessian_directions(vol, radius / 2.0, None).unwrap();
        let target = AxialDirection::from_vector(axis[0], axis[1], axis[2]).unwrap();
        let [nx, ny, nz] = vol.dims();
        let mut total = 0usize;
        let mut good = 0usize;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    // Interior: radial margin 1 voxel, axial margin 4.
                    let (a, b, along) = match tube {
                        'z' => (x as f64 + 0.5 - 24.0, y as f64 + 0.5 - 24.0, z),
                        _ => (x as f64 + 0.5 - 24.0, z as f64 + 0.5 - 24.0, y),
                    };
                    let n_along = if tube == 'z' { nz } else { ny };
                    if a * a + b * b > (radius - 1.0) * (radius - 1.0)
                        || along < 4
                        || along >= n_along - 4
                    {
                        continue;
                    }
                    total += 1;
                    let idx = x + nx * (y + ny * z);
                    if let Some(v) = voxels.direction(idx) {
                        let angle =
                            geodesic_distance(&v, target.as_unit(), Metric::Axial).to_degrees();
                        if angle <= 5.0 {
                            good += 1;
                        }
                    }
                }
            }
        }
        good as f64 / total as f64
    };
    let frac_z = accuracy(&vol, [0.0, 0.0, 1.0], 'z');
    assert!(frac_z >= 0.95, "only {:.1}% within 5 deg", frac_z * 100.0);

    // Rotate the volume 90 degrees about x: (x, y, z) -> (x, -z, y).
    let [nx, ny, nz] = dims;
    let mut rotated = Volume3D::zeros([nx, nz, ny]);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                rotated.set(x, nz - 1 - z, y, vol.get(x, y, z));
            }
        }
    }
    let frac_rot = accuracy(&rotated, [0.0, 1.0, 0.0], 'y');
    assert!(
        frac_rot >= 0.95,
        "rotated: only {:.1}% within 5 deg",
        frac_rot * 100.0
    );
    pass(
        "criterion 6 (direction field)",
        format!(
            "{:.1}% within 5 degrees, {:.1}% after 90-degree rotation",
            frac_z * 100.0,
            frac_rot * 100.0
        ),
    );
}

/// Criterion 7: invariant suites at CI size with zero violations:
/// permutation invariance of the window attributes, axial sign
/// invariance, RSA non-intersection against the brute-force oracle,
/// determinism of simulation and clustering, and the VTK round-trip.
#[test]
fn criterion_7_invariant_suites() {
    let mut violations = 0usize;

    // Permutation invariance of mean direction and entropy.
    let mut rng = StdRng::seed_from_u64(70);
    for _ in 0..50 {
        let units: Vec<UnitVector> = (0..60)
            .map(|_| sample_vmf(&mut rng, [0.0, 0.0, 1.0], 0.0))
            .collect();
        let axes: Vec<AxialDirection> =
            units.iter().map(|&u| AxialDirection::canonicalize(u)).collect();
        let h = nn_entropy(&units, Metric::Axial).unwrap().value;
        let m = mean_direction(&axes).unwrap();
        let mut perm: Vec<usize> = (0..60).collect();
        for i in (1..60).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let units_p: Vec<UnitVector> = perm.iter().map(|&i| units[i]).collect();
        let axes_p: Vec<AxialDirection> = perm.iter().map(|&i| axes[i]).collect();
        let h_p = nn_entropy(&units_p, Metric::Axial).unwrap().value;
        let m_p = mean_direction(&axes_p).unwrap();
        if (h - h_p).abs() > 1e-12 || (0..3).any(|k| (m[k] - m_p[k]).abs() > 1e-12) {
            violations += 1;
        }
    }

    // Axial sign invariance: flipping input vectors changes nothing
    // after canonicalization.
    for _ in 0..50 {
        let units: Vec<UnitVector> = (0..40)
            .map(|_| sample_vmf(&mut rng, [0.3, 0.5, 0.8], 5.0))
            .collect();
        let flipped: Vec<UnitVector> = units
            .iter()
            .enumerate()
            .map(|(i, u)| if i % 2 == 0 { u.flipped() } else { *u })
            .collect();
        let a: Vec<AxialDirection> = units.iter().map(|&u| AxialDirection::canonicalize(u)).collect();
        let b: Vec<AxialDirection> =
            flipped.iter().map(|&u| AxialDirection::canonicalize(u)).collect();
        if a != b {
            violations += 1;
        }
        if (nn_entropy(&units, Metric::Axial).unwrap().value
            - nn_entropy(&flipped, Metric::Axial).unwrap().value)
            .abs()
            > 1e-12
        {
            violations += 1;
        }
    }

    // RSA non-intersection (brute force) and determinism at CI size.
    let params = RsaParams {
        domain_dims: [64, 64, 64],
        radius: 2.0,
        length: 16.0,
        volume_fraction: 0.1,
        seed: 77,
        ..RsaParams::default()
    };
    let fs = generate_rsa(&params).unwrap();
    let fs2 = generate_rsa(&params).unwrap();
    if fs != fs2 {
        violations += 1;
    }
    for i in 0..fs.cylinders.len() {
        for j in (i + 1)..fs.cylinders.len() {
            let (p1, q1) = fs.cylinders[i].endpoints();
            let (p2, q2) = fs.cylinders[j].endpoints();
            if segment_distance(p1, q1, p2, q2)
                <= fs.cylinders[i].radius + fs.cylinders[j].radius - 1e-9
            {
                violations += 1;
            }
        }
    }

    // Clustering determinism.
    let (grid, _) = bimodal_grid(7);
    let fit_a = sem_fit(&grid, &SemParams::default()).unwrap();
    let fit_b = sem_fit(&grid, &SemParams::default()).unwrap();
    if fit_a.cluster_map != fit_b.cluster_map {
        violations += 1;
    }

    // VTK round-trip.
    let map = ClusterMap {
        grid_dims: [3, 3, 3],
        positions: (0..27).map(|i| [i % 3, (i / 3) % 3, i / 9]).collect(),
        labels: (0..27).map(|i| u32::from(i % 7 == 0)).collect(),
        anomaly_labels: BTreeSet::from([1]),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("labels.vtk");
    vtk::export_labels_vtk(&path, &map, 4, 8, 8).unwrap();
    let parsed = vtk::read_structured_points(&path).unwrap();
    let expected = vtk::label_field(&map);
    match &parsed.fields[0] {
        vtk::VtkField::Int { values, .. } => {
            if *values != expected {
                violations += 1;
            }
        }
        _ => violations += 1,
    }

    assert_eq!(violations, 0, "{violations} invariant violations");
    pass(
        "criterion 7 (invariant suites)",
        format!(
            "0 violations across permutation, sign, non-intersection ({} fibres), determinism, VTK round-trip",
            fs.cylinders.len()
        ),
    );
}
