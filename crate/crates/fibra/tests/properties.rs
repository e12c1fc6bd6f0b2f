//! Property tests over randomly generated inputs: geometry invariants
//! and lossless round-trips of the on-disk formats.

use fibra::cluster::ClusterMap;
use fibra::dirfield::DirectionField;
use fibra::geometry::{geodesic_distance, AxialDirection, Metric, UnitVector};
use proptest::prelude::*;
use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

fn arb_unit_vector() -> impl Strategy<Value = UnitVector> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter_map("too short to normalize", |(x, y, z)| {
            UnitVector::new(x, y, z).ok()
        })
}

proptest! {
    #[test]
    fn canonicalize_idempotent_and_sign_invariant(v in arb_unit_vector()) {
        let c = AxialDirection::canonicalize(v);
        prop_assert_eq!(c, AxialDirection::canonicalize(v.flipped()));
        prop_assert_eq!(c, AxialDirection::canonicalize(*c.as_unit()));
        let [x, y, z] = c.components();
        prop_assert!(z > 0.0 || (z == 0.0 && y > 0.0) || (z == 0.0 && y == 0.0 && x == 1.0));
    }

    #[test]
    fn spherical_triangle_inequality(
        a in arb_unit_vector(),
        b in arb_unit_vector(),
        c in arb_unit_vector(),
    ) {
        let ab = geodesic_distance(&a, &b, Metric::Spherical);
        let bc = geodesic_distance(&b, &c, Metric::Spherical);
        let ac = geodesic_distance(&a, &c, Metric::Spherical);
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn axial_distance_never_exceeds_quarter_turn(
        a in arb_unit_vector(),
        b in arb_unit_vector(),
    ) {
        let d = geodesic_distance(&a, &b, Metric::Axial);
        prop_assert!((0.0..=FRAC_PI_2).contains(&d));
        prop_assert_eq!(d, geodesic_distance(&a, &b.flipped(), Metric::Axial));
    }

    #[test]
    fn cluster_map_csv_roundtrip(
        dims in (1usize..5, 1usize..5, 1usize..5),
        labels in proptest::collection::vec(0u32..6, 1..60),
        anomaly in 0u32..6,
    ) {
        let (mx, my, mz) = dims;
        let capacity = mx * my * mz;
        let labels: Vec<u32> = labels.into_iter().take(capacity).collect();
        let positions: Vec<[usize; 3]> = (0..labels.len())
            .map(|i| [i % mx, (i / mx) % my, i / (mx * my)])
            .collect();
        let map = ClusterMap {
            grid_dims: [mx, my, mz],
            positions,
            labels,
            anomaly_labels: BTreeSet::from([anomaly]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        map.save_csv(&path).unwrap();
        let loaded = ClusterMap::load_csv(&path).unwrap();
        // Written labels are in the display convention; masks and the
        // grid must survive unchanged.
        prop_assert_eq!(loaded.grid_dims, map.grid_dims);
        prop_assert_eq!(&loaded.positions, &map.positions);
        prop_assert_eq!(loaded.anomaly_mask(), map.anomaly_mask());
        prop_assert_eq!(&loaded.labels, &map.display_labels());
    }

    #[test]
    fn direction_field_csv_roundtrip(
        dims in (1usize..4, 1usize..4, 1usize..4),
        seeds in proptest::collection::vec((any::<u32>(), 0u32..100, any::<bool>()), 1..48),
    ) {
        let (mx, my, mz) = dims;
        let n = mx * my * mz;
        let cells: Vec<(Option<AxialDirection>, u32)> = (0..n)
            .map(|i| {
                let (seed, count, valid) = seeds[i % seeds.len()];
                if valid {
                    let t = seed as f64 / u32::MAX as f64;
                    let dir = AxialDirection::from_vector(
                        (t * 12.9898).sin(),
                        (t * 78.233).cos(),
                        0.3 + t,
                    )
                    .unwrap();
                    (Some(dir), count)
                } else {
                    (None, count)
                }
            })
            .collect();
        let field = DirectionField::from_cells([mx, my, mz], 4, cells);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("directions.csv");
        field.save_csv(&path).unwrap();
        let loaded = DirectionField::load_csv(&path).unwrap();
        prop_assert_eq!(loaded, field);
    }
}
