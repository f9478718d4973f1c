//! Vicinity, voting and agreement checks.

#![allow(clippy::needless_range_loop)]

use nalgebra::DMatrix;
use proptest::prelude::*;

use spectra::recommend::*;
use spectra::spectral::{centroids_rating, Centroids, Embedding};
use spectra::synthdata::{gen_ratings, ClassAssignment, RatingModel};
use spectra::{Edge, SparseGraph};

fn arb_embedding() -> impl Strategy<Value = Embedding> {
    (2usize..30, 1usize..4).prop_flat_map(|(n, l)| {
        proptest::collection::vec(-3.0f64..3.0, n * l).prop_map(move |v| Embedding { profiles: DMatrix::from_vec(n, l, v) })
    })
}

fn arb_ratings() -> impl Strategy<Value = SparseGraph> {
    (1usize..15, 1usize..10).prop_flat_map(|(n, f)| {
        proptest::collection::vec(any::<bool>(), n * f).prop_map(move |cells| {
            let entries = cells.iter().enumerate().filter(|(_, &c)| c).map(|(c, _)| Edge { u: c / f, v: c % f, w: 1.0 }).collect();
            SparseGraph::bipartite(n, f, entries).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn vicinity_contains_self_and_grows_with_radius(emb in arb_embedding(), d in 0.01f64..3.0, extra in 0.0f64..3.0, pick in 0usize..1000) {
        let u = pick % emb.n();
        let small = vicinity(&emb, u, d).unwrap();
        let large = vicinity(&emb, u, d + extra).unwrap();
        prop_assert!(small.contains(&u));
        prop_assert!(small.iter().all(|v| large.contains(v)));
        for v in 0..emb.n() {
            let dist = (emb.profiles.row(u) - emb.profiles.row(v)).norm();
            prop_assert_eq!(small.contains(&v), dist <= d);
        }
    }

    #[test]
    fn votes_equal_double_loop(s in arb_ratings(), mask in proptest::collection::vec(any::<bool>(), 15)) {
        let vic: Vec<usize> = (0..s.n()).filter(|&u| mask[u]).collect();
        let items: Vec<usize> = (0..s.n_items()).collect();
        let tally = votes(&s, &vic, &items).unwrap();
        prop_assert_eq!(tally.vicinity_size, vic.len());
        for &f in &items {
            let mut count = 0u64;
            for &v in &vic {
                for e in s.edges() {
                    if e.u == v && e.v == f {
                        count += 1;
                    }
                }
            }
            prop_assert_eq!(tally.count(f), count);
            prop_assert!(count as usize <= vic.len());
        }
    }
}

fn centroid_embedding(cents: &Centroids, users: &ClassAssignment) -> Embedding {
    Embedding { profiles: DMatrix::from_fn(users.len(), cents.dim(), |u, j| cents.points[(users.label(u), j)]) }
}

#[test]
fn exact_profiles_in_dense_regime_vote_consistently() {
    let model = RatingModel::new(200, 0.5, vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.2, 0.7]], 200.0).unwrap();
    let (s, users, items) = gen_ratings(&model, 1).unwrap();
    let realized = model.with_realized_fractions(&users, &items);
    let cents = centroids_rating(&realized, 2).unwrap();
    let emb = centroid_embedding(&cents, &users);
    let truth = RatingTruth { model: &realized, users: &users, items: &items };
    let report = evaluate_voting(&s, &emb, &cents, truth, VotingParams { radius: None, sample_size: 6, n_samples: 10, seed: 3 }).unwrap();
    assert_eq!(report.excluded_fraction, 0.0);
    assert_eq!(report.consistency_fraction, 1.0);

    let single = evaluate_voting(&s, &emb, &cents, truth, VotingParams { radius: None, sample_size: 1, n_samples: 10, seed: 3 }).unwrap();
    assert_eq!(single.consistency_fraction, 1.0);
}

#[test]
fn constant_affinity_rows_are_trivially_consistent() {
    let model = RatingModel::new(100, 0.5, vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![0.6, 0.6], vec![0.2, 0.2]], 50.0).unwrap();
    let (s, users, items) = gen_ratings(&model, 2).unwrap();
    let realized = model.with_realized_fractions(&users, &items);
    let cents = centroids_rating(&realized, 1).unwrap();
    let emb = centroid_embedding(&cents, &users);
    let truth = RatingTruth { model: &realized, users: &users, items: &items };
    let report = evaluate_voting(&s, &emb, &cents, truth, VotingParams { radius: None, sample_size: 5, n_samples: 10, seed: 0 }).unwrap();
    assert_eq!(report.consistency_fraction, 1.0);
}

#[test]
fn identical_users_agree_at_item_popularity() {
    let model = RatingModel::new(200, 0.5, vec![1.0], vec![1.0], vec![vec![0.3]], 200.0).unwrap();
    let (s, _, _) = gen_ratings(&model, 4).unwrap();
    let curve = agreement_experiment(&s, 1, 5, 4).unwrap();
    let sd = (0.3f64 * 0.7 / curve.users_evaluated as f64).sqrt();
    assert!((curve.mean_popularity - 0.3).abs() < 0.01);
    for &f in &curve.frequency {
        assert!((f - 0.3).abs() <= 3.0 * sd, "{:?}", curve.frequency);
    }
    assert_eq!(curve.to_csv().lines().next(), Some("rank,frequency"));
}

#[test]
fn nearest_neighbour_beats_popularity_on_planted_classes() {
    let model = RatingModel::new(400, 0.5, vec![0.5, 0.5], vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.1, 0.9]], 40.0).unwrap();
    let diffs: Vec<f64> = (0..10)
        .map(|seed| {
            let (s, _, _) = gen_ratings(&model, seed).unwrap();
            let curve = agreement_experiment(&s, 2, 10, seed).unwrap();
            curve.frequency[0] - curve.mean_popularity
        })
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean > 3.0 * sd / n.sqrt(), "mean gain {mean}, sd {sd}");
}
