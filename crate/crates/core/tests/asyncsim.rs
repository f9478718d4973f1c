//! Event-driven simulator: transcription oracle replays, snapshot
//! accounting, determinism and f2 properties.

#![allow(clippy::needless_range_loop)]

mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use spectra::asyncsim::*;
use spectra::synthdata::{gen_similarity, SimilarityModel};
use spectra::{Edge, SparseGraph};

use common::*;

fn replay_against_oracle(g: &SparseGraph, seed: u64, events: usize) {
    let a = dense_weights(g);
    let mut cfg = SimConfig::benchmark(1e6, seed);
    cfg.gain = 0.02;
    let mut sim = AsyncSim::new(g, 2, cfg).unwrap();
    let mut oracle = sim.states().to_vec();
    let n_scale = sim.n_scale();
    let mut last_t = 0.0;
    for _ in 0..events {
        let (t, ev) = sim.step().unwrap().expect("clocks never run out");
        assert!(t > last_t);
        last_t = t;
        match ev {
            Event::Local(u) => async_local_oracle(&mut oracle, &a, u, 0.02, n_scale, &[0.0, 0.0]),
            Event::Gossip(u, v) => async_gossip_oracle(&mut oracle, u, v),
        }
        for (p, q) in sim.states().iter().zip(&oracle) {
            assert!(max_abs_diff(&p.x, &q.x) <= 1e-14);
            assert!(max_abs_diff(&p.pi, &q.pi) <= 1e-14);
            assert!(max_abs_diff(&p.phi, &q.phi) <= 1e-14);
            assert!((p.psi - q.psi).abs() <= 1e-14);
            assert_eq!(p.w, q.w);
        }
    }
}

#[test]
fn two_node_sequence_matches_oracle() {
    let g = SparseGraph::similarity(2, vec![Edge { u: 0, v: 1, w: 0.8 }]).unwrap();
    replay_against_oracle(&g, 4, 300);
}

#[test]
fn five_node_sequence_matches_oracle() {
    replay_against_oracle(&five_node_graph(), 9, 2000);
}

#[test]
fn injections_are_change_since_last_gossip() {
    let model = SimilarityModel::four_class_with_omega(40, 8.0);
    let (g, _) = gen_similarity(&model, 1).unwrap();
    let mut cfg = SimConfig::benchmark(1e6, 2);
    cfg.gain = 0.01;
    cfg.node_rate = 2.0;
    let mut sim = AsyncSim::new(&g, 2, cfg).unwrap();
    // shadow copies of each node's Π and X as of its last gossip
    let mut shadow_pi: Vec<Vec<f64>> = sim.states().iter().map(|s| s.pi.clone()).collect();
    let mut shadow_x: Vec<Vec<f64>> = sim.states().iter().map(|s| s.x.clone()).collect();
    let sq = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..5000 {
        let before = sim.states().to_vec();
        let (_, ev) = sim.step().unwrap().unwrap();
        let Event::Gossip(u, v) = ev else { continue };
        let after = sim.states();
        for z in [u, v] {
            assert_eq!(before[z].pi0, shadow_pi[z]);
            assert_eq!(before[z].x0, shadow_x[z]);
            let (cur, old) = (f2(&before[z].pi), f2(&shadow_pi[z]));
            for e in 0..4 {
                let avg = 0.5 * (before[u].phi[e] + before[v].phi[e]);
                assert!((after[z].phi[e] - (avg + cur[e] - old[e])).abs() <= 1e-14);
            }
            let avg = 0.5 * (before[u].psi + before[v].psi);
            assert!((after[z].psi - (avg + sq(&before[z].x) - sq(&shadow_x[z]))).abs() <= 1e-14);
            shadow_pi[z] = after[z].pi.clone();
            shadow_x[z] = after[z].x.clone();
        }
    }
}

#[test]
fn identical_configs_give_identical_runs() {
    let model = SimilarityModel::four_class_with_omega(80, 10.0);
    let (g, _) = gen_similarity(&model, 3).unwrap();
    let mut cfg = SimConfig::benchmark(5.0, 6);
    cfg.noise_std = 1e-3;
    cfg.trace_every = 1.0;
    let a = run_async(&g, 2, &cfg).unwrap();
    let b = run_async(&g, 2, &cfg).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.states, b.states);
    assert_eq!(a.trace.to_csv_string(), b.trace.to_csv_string());
}

#[test]
fn residual_falls_on_small_planted_instances() {
    for seed in 0..3 {
        let model = SimilarityModel::four_class_with_omega(300, 22.0);
        let (g, _) = gen_similarity(&model, seed).unwrap();
        let mut cfg = SimConfig::benchmark(40.0, seed);
        cfg.trace_every = 40.0;
        let run = run_async(&g, 2, &cfg).unwrap();
        let res = run.trace.column("residual").unwrap();
        assert!(res.last().unwrap() < &res[0], "seed {seed}: {res:?}");
    }
}

proptest! {
    #[test]
    fn f2_is_symmetric_psd(pi in proptest::collection::vec(-10.0f64..10.0, 1..=4)) {
        let l = pi.len();
        let m = f2(&pi);
        for i in 0..l {
            for j in 0..l {
                prop_assert_eq!(m[i * l + j], pi[i] * pi[j]);
                prop_assert_eq!(m[i * l + j], m[j * l + i]);
            }
        }
        let min = DMatrix::from_row_slice(l, l, &m).symmetric_eigen().eigenvalues.min();
        prop_assert!(min >= -1e-12 * (1.0 + pi.iter().map(|v| v * v).sum::<f64>()));
    }
}
