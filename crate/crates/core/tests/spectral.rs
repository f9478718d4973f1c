//! Spectral oracle checks against nalgebra decompositions and planted-model
//! properties.

#![allow(clippy::needless_range_loop)]

use nalgebra::DMatrix;
use proptest::prelude::*;

use spectra::linalg::Order;
use spectra::spectral::*;
use spectra::synthdata::*;
use spectra::{Edge, SparseGraph};

fn check_pairs(a: &DMatrix<f64>, spec: &Spectrum) {
    let fro = a.norm();
    for k in 0..spec.dim() {
        let v = spec.vectors.column(k);
        assert!((a * v - v * spec.values[k]).norm() <= 1e-9 * fro.max(f64::MIN_POSITIVE));
    }
    for w in spec.values.windows(2) {
        assert!(w[0].abs() >= w[1].abs());
    }
    let l = spec.dim();
    assert!((spec.vectors.transpose() * &spec.vectors - DMatrix::identity(l, l)).norm() <= 1e-8);
}

fn arb_symmetric() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=24).prop_flat_map(|n| {
        proptest::collection::vec(-5.0f64..5.0, n * n).prop_map(move |v| {
            let m = DMatrix::from_vec(n, n, v);
            (&m + m.transpose()) * 0.5
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigenpairs_have_small_residual(a in arb_symmetric(), pick in 0.0f64..1.0) {
        let n = a.nrows();
        let l = 1 + ((n - 1) as f64 * pick) as usize;
        match eig_top(&a, l) {
            Ok(spec) => check_pairs(&a, &spec),
            // a magnitude tie at the selection boundary is the only accepted failure
            Err(spectra::Error::Degenerate { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn singular_values_are_positive_tau_eigenvalues(cells in proptest::collection::vec(proptest::option::weighted(0.5, 0.1f64..1.0), 42)) {
        let entries: Vec<Edge> = cells.iter().enumerate().filter_map(|(c, w)| w.map(|w| Edge { u: c / 6, v: c % 6, w })).collect();
        let s = SparseGraph::bipartite(7, 6, entries).unwrap();
        let mut sv: Vec<f64> = s.to_dense().svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let mut ev: Vec<f64> = tau_embed(&s).unwrap().to_dense().symmetric_eigen().eigenvalues.iter().copied().filter(|v| *v > 1e-9).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let positive: Vec<f64> = sv.iter().copied().filter(|v| *v > 1e-9).collect();
        prop_assert_eq!(ev.len(), positive.len());
        for (a, b) in ev.iter().zip(&positive) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn lanczos_path_above_the_jacobi_limit() {
    let model = SimilarityModel::four_class_with_omega(800, 20.0);
    let (g, _) = gen_similarity(&model, 3).unwrap();
    let dense = g.to_dense();
    let spec = eig_top(&dense, 3).unwrap();
    check_pairs(&dense, &spec);
    let oracle = dense.symmetric_eigen();
    let mut mags: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
    mags.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    for k in 0..3 {
        assert!((spec.values[k] - mags[k]).abs() < 1e-9);
    }
}

#[test]
fn svd_of_random_6x4_matches_dense_svd() {
    let w = [[0.3, 0.0, 0.9, 0.2], [0.0, 0.5, 0.1, 0.0], [0.7, 0.4, 0.0, 0.6], [0.0, 0.0, 0.8, 0.1], [0.2, 0.9, 0.0, 0.0], [0.5, 0.0, 0.3, 0.4]];
    let mut entries = Vec::new();
    for (u, row) in w.iter().enumerate() {
        for (i, &x) in row.iter().enumerate() {
            if x > 0.0 {
                entries.push(Edge { u, v: i, w: x });
            }
        }
    }
    let s = SparseGraph::bipartite(6, 4, entries).unwrap();
    let dense = DMatrix::from_fn(6, 4, |u, i| w[u][i]);
    let svd = dense.svd(true, false);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let spec = svd_top(&s, 4).unwrap();
    let u = svd.u.unwrap();
    for k in 0..4 {
        assert!((spec.values[k] - svd.singular_values[order[k]]).abs() < 1e-9);
        let col = u.column(order[k]);
        let d = (spec.vectors.column(k) - col).norm().min((spec.vectors.column(k) + col).norm());
        assert!(d < 1e-9);
    }
}

#[test]
fn subspace_residual_matches_projector() {
    let basis_raw = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0, -1.0, 0.5, 0.3, 0.0]);
    let q = basis_raw.qr().q();
    let spec = Spectrum { values: vec![2.0, 1.0], vectors: q.clone() };
    let x = DMatrix::from_row_slice(5, 2, &[0.4, -1.2, 0.7, 0.1, -0.3, 0.9, 1.5, 0.2, 0.0, -0.8]);
    let p = &q * q.transpose();
    let outside = (DMatrix::<f64>::identity(5, 5) - p) * &x;
    let want = outside.norm_squared() / x.norm_squared();
    assert!((subspace_residual(&x, &spec).unwrap() - want).abs() < 1e-14);
}

#[test]
fn two_class_block_expectation_has_two_profiles() {
    let model = SimilarityModel::new(120, vec![0.25, 0.75], vec![vec![0.9, 0.3], vec![0.3, 0.5]], 60.0).unwrap();
    let assign = ClassAssignment::from_fractions(&model.alpha, 120);
    let emb = embed(&eig_top(&block_expectation(&model, &assign).unwrap(), 2).unwrap());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for u in 0..120 {
        let r = emb.row(u);
        if !rows.iter().any(|q| q.iter().zip(&r).all(|(a, b)| (a - b).abs() <= 1e-9)) {
            rows.push(r);
        }
    }
    assert_eq!(rows.len(), 2);
}

#[test]
fn dense_instance_is_recovered() {
    // four-class B scaled to valid probabilities at p = 1/2
    let b: Vec<Vec<f64>> = FOUR_CLASS_B.iter().map(|r| r.iter().map(|x| x / 4.0).collect()).collect();
    let alpha = SimilarityModel::four_class_with_omega(400, 1.0).alpha;
    let model = SimilarityModel::new(400, alpha, b, 200.0).unwrap();
    for seed in 0..5 {
        let (g, assign) = gen_similarity(&model, seed).unwrap();
        let emb = embed(&eig_top_operator(&g, 2, Order::Magnitude).unwrap());
        let cents = centroids_similarity(&model.with_realized_fractions(&assign), 2).unwrap();
        let score = cluster_accuracy(&emb, &cents, &assign, 1.0).unwrap();
        assert!(score.accuracy >= 0.99, "seed {seed}: {}", score.accuracy);
        assert_eq!(cluster_accuracy(&emb, &cents, &assign, 0.0).unwrap().fraction_within, 0.0);
    }
}

/// Largest observed value of `sin∠(x_k, x̄_k) ω^{1/4}` was 0.61 over 20
/// seeds at C = 2, 4, 8.
const PERTURBATION_CONSTANT: f64 = 0.75;

#[test]
fn eigenvector_perturbation_shrinks_with_omega() {
    let n = 1000;
    for c in [2.0, 4.0, 8.0] {
        let omega = c * (n as f64).ln();
        let model = SimilarityModel::four_class_with_omega(n, omega);
        let assign = ClassAssignment::from_fractions(&model.alpha, n);
        let expected = eig_top(&expected_adjacency(&model, &assign).unwrap(), 2).unwrap();
        for seed in 0..20 {
            let g = gen_similarity_for(&model, &assign, seed).unwrap();
            let x = eig_top_operator(&g, 2, Order::Magnitude).unwrap();
            for k in 0..2 {
                let s = sin_angle(x.vectors.column(k).as_slice(), expected.vectors.column(k).as_slice());
                assert!(s <= PERTURBATION_CONSTANT * omega.powf(-0.25), "C={c} seed {seed} k={k}: sin {s}");
            }
        }
    }
}

#[test]
fn radius_scales_with_root_omega_not_omega() {
    let omegas = [5.0, 10.0, 20.0, 40.0, 80.0];
    let means: Vec<f64> = omegas
        .iter()
        .map(|&w| {
            let model = SimilarityModel::four_class_with_omega(1000, w);
            (0..5).map(|s| spectral_radius_ratio(&model, s).unwrap()).sum::<f64>() / 5.0
        })
        .collect();
    let root_spread = means.iter().copied().fold(0.0, f64::max) / means.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(root_spread < 1.3, "ρ/√ω spread {root_spread}");
    // normalizing by ω instead leaves a residual ω^{-1/2} trend
    let by_omega: Vec<f64> = means.iter().zip(&omegas).map(|(m, w)| m / w.sqrt()).collect();
    assert!(by_omega.windows(2).all(|p| p[1] < p[0]));
    assert!(by_omega[0] / by_omega[4] > 3.0);
}

#[test]
fn recombination_with_orthogonal_matrix_keeps_labels() {
    let model = SimilarityModel::four_class_with_omega(1000, 40.0);
    let (g, assign) = gen_similarity(&model, 0).unwrap();
    let emb = embed(&eig_top_operator(&g, 2, Order::Magnitude).unwrap());
    let cents = centroids_similarity(&model.with_realized_fractions(&assign), 2).unwrap().aligned_to(&emb, &assign);
    let before = nearest_centroid(&emb, &cents);
    let w = random_recombination(2, 1.0, 1.0, 5);
    assert!((w.transpose() * &w - DMatrix::identity(2, 2)).norm() < 1e-12);
    assert_eq!(nearest_centroid(&recombine(&emb, &w).unwrap(), &cents.recombined(&w)), before);
}
