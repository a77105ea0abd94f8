mod common;

use std::collections::BTreeSet;

use common::*;
use mmgt::geometry::{build_point_graph, coverage_radius, extract_surface_points, fps_indices};
use mmgt::types::PointsCloud;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn surface_matches_exhaustive_scan_on_random_blobs() {
    let mut r = rng(1);
    for _ in 0..30 {
        let n = r.random_range(4..12);
        let steps = r.random_range(1..200);
        let mask = random_blob(&mut r, n, steps);
        let cloud = extract_surface_points(&mask).unwrap();
        let got: BTreeSet<[usize; 3]> = (0..cloud.len())
            .map(|k| cloud.point(k).map(|c| c as usize))
            .collect();
        let want: BTreeSet<[usize; 3]> = surface_oracle(&mask).into_iter().collect();
        assert_eq!(got, want);
        assert_eq!(cloud.len(), want.len());
        assert_eq!(extract_surface_points(&mask).unwrap(), cloud);
    }
}

#[test]
fn fps_is_maximal_at_every_step() {
    let mut r = rng(2);
    for trial in 0..100 {
        let p = r.random_range(1..=256);
        // integer grids produce plenty of ties
        let cloud = if trial % 2 == 0 {
            random_cloud(&mut r, p, 10.0)
        } else {
            let m = ndarray::Array2::from_shape_simple_fn((p, 3), || r.random_range(0..5) as f64);
            PointsCloud::new(m, None).unwrap()
        };
        let k = r.random_range(1..=p.min(64));
        let chosen = fps_indices(&cloud, k, 0).unwrap();
        assert_eq!(chosen.len(), k);
        fps_steps_are_maximal(&cloud, &chosen).unwrap();
    }
}

#[test]
fn fps_with_k_equal_to_p_returns_every_point() {
    let cloud = random_cloud(&mut rng(3), 40, 5.0);
    let mut chosen = fps_indices(&cloud, 40, 0).unwrap();
    chosen.sort();
    assert_eq!(chosen, (0..40).collect::<Vec<_>>());
    assert!(fps_indices(&cloud, 41, 0).is_err());
}

#[test]
fn radius_graph_matches_all_pairs() {
    let mut r = rng(4);
    for _ in 0..20 {
        let cloud = random_cloud(&mut r, 50, 6.0);
        let rho = r.random_range(0.5..3.0);
        let g = build_point_graph(&cloud, rho).unwrap();
        let got: BTreeSet<(usize, usize)> = g.edges.iter().copied().collect();
        assert_eq!(got.len(), g.edges.len(), "duplicate edges");
        assert_eq!(got, radius_oracle(&cloud, rho));
        for (m, &(i, j)) in g.edges.iter().enumerate() {
            assert!(i != j && got.contains(&(j, i)));
            assert!(g.edge_features[m] <= rho);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coverage_shrinks_as_k_grows(seed in 0u64..1000, p in 2usize..80) {
        let cloud = random_cloud(&mut rng(seed), p, 8.0);
        let all = fps_indices(&cloud, p, 0).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=p {
            let c = coverage_radius(&cloud, &all[..k]);
            prop_assert!(c <= last);
            last = c;
        }
        prop_assert_eq!(last, 0.0);
    }

    #[test]
    fn point_graphs_are_symmetric_and_bounded(seed in 0u64..1000, p in 1usize..60, rho in 0.1f64..4.0) {
        let cloud = random_cloud(&mut rng(seed), p, 5.0);
        let g = build_point_graph(&cloud, rho).unwrap();
        let set: BTreeSet<_> = g.edges.iter().copied().collect();
        for (m, &(i, j)) in g.edges.iter().enumerate() {
            prop_assert!(i != j);
            prop_assert!(set.contains(&(j, i)));
            prop_assert!(g.edge_features[m] <= rho);
        }
    }
}
