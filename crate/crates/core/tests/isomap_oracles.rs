mod common;

use common::{dense_eigen, floyd_warshall, grid_5x5 as grid, procrustes_residual, random_features};
use feudalnav_core::projector::{double_center, DEFAULT_NEIGHBORS, fit_isomap, geodesic_matrix, train_imitator, ImitatorTraining};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn geodesics_and_mds_match_dense_oracles(seed in 0u64..10_000, n in 3usize..=50, k in 1usize..8, dim in 2usize..6) {
        let f = random_features(seed, n, dim);
        let k = k.min(n - 1);
        let g = geodesic_matrix(&f, k);
        let oracle = floyd_warshall(&f, k);
        for (a, b) in g.iter().zip(oracle.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
        // geodesic never undercuts straight-line feature distance
        for i in 0..n {
            for j in 0..n {
                let e: f64 = f.row(i).iter().zip(f.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                prop_assert!(g[[i, j]] >= e - 1e-12);
            }
        }

        let model = fit_isomap(&f, k).unwrap();
        let b = double_center(&g);
        let top = dense_eigen(&b);
        // a degenerate spectrum leaves the eigenvector ill-defined; compare only separated pairs
        let spectrum: Vec<f64> = top.iter().map(|(l, _)| *l).collect();
        for c in 0..2 {
            let (lambda, ref v) = top[c];
            prop_assert!((model.eigenvalues[c] - lambda.max(0.0)).abs() <= 1e-8 * lambda.abs().max(1.0));
            let gap = (spectrum[c] - spectrum[c + 1]).min(if c > 0 { spectrum[c - 1] - spectrum[c] } else { f64::INFINITY });
            if lambda <= 0.0 || gap < 1e-6 * spectrum[0].abs() {
                continue;
            }
            let scale = lambda.sqrt();
            let col = model.embedding.column(c);
            let plus = col.iter().zip(v).map(|(a, b)| (a - b * scale).abs()).fold(0.0, f64::max);
            let minus = col.iter().zip(v).map(|(a, b)| (a + b * scale).abs()).fold(0.0, f64::max);
            prop_assert!(plus.min(minus) <= 1e-8 * scale.max(1.0), "column {c}: {plus} / {minus}");
        }
    }

    #[test]
    fn full_graph_geodesics_equal_euclidean(seed in 0u64..1000, n in 3usize..20) {
        let f = random_features(seed, n, 3);
        let g = geodesic_matrix(&f, n - 1);
        for i in 0..n {
            for j in 0..n {
                let e: f64 = f.row(i).iter().zip(f.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                prop_assert!((g[[i, j]] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_permutes_rows(seed in 0u64..1000, n in 5usize..25) {
        let f = random_features(seed, n, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let shuffled = f.select(ndarray::Axis(0), &perm);
        let a = fit_isomap(&f, 4).unwrap();
        let b = fit_isomap(&shuffled, 4).unwrap();
        let ga = geodesic_matrix(&f, 4);
        let gb = geodesic_matrix(&shuffled, 4);
        for i in 0..n {
            for j in 0..n {
                prop_assert!((gb[[i, j]] - ga[[perm[i], perm[j]]]).abs() < 1e-12);
            }
        }
        for c in 0..2 {
            prop_assert!((a.eigenvalues[c] - b.eigenvalues[c]).abs() <= 1e-8 * a.eigenvalues[0].max(1.0));
        }
    }
}

#[test]
fn grid_is_recovered_up_to_similarity() {
    let model = fit_isomap(&grid(), DEFAULT_NEIGHBORS).unwrap();
    let residual = procrustes_residual(&model.embedding, &grid());
    let diameter = 32f64.sqrt();
    assert!(residual < 0.05 * diameter, "residual {residual}");
}

#[test]
fn imitator_reproduces_grid_embedding() {
    let model = fit_isomap(&grid(), 4).unwrap();
    let (net, rmse) = train_imitator(&model, &ImitatorTraining::default());
    assert!(rmse < 0.05 * model.diameter(), "rmse {rmse} diameter {}", model.diameter());
    for i in 0..25 {
        let f = feudalnav_core::encoder::FeatureVec { values: model.features.row(i).to_vec() };
        let p = feudalnav_core::projector::project(&net, &f).unwrap();
        let d = ((p[0] - model.embedding[[i, 0]]).powi(2) + (p[1] - model.embedding[[i, 1]]).powi(2)).sqrt();
        assert!(d <= 3.0 * rmse + 1e-12 || d < 0.05 * model.diameter());
    }
}

#[test]
fn gram_matches_top_two_reconstruction() {
    let f = random_features(3, 30, 4);
    let model = fit_isomap(&f, 6).unwrap();
    let b = double_center(&geodesic_matrix(&f, 6));
    let top = &dense_eigen(&b)[..2];
    let gram = model.embedding.dot(&model.embedding.t());
    for i in 0..30 {
        for j in 0..30 {
            let expected: f64 = top.iter().map(|(l, v)| l.max(0.0) * v[i] * v[j]).sum();
            assert!((gram[[i, j]] - expected).abs() < 1e-6);
        }
    }
}

