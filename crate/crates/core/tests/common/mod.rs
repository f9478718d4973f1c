//! Independent scalar re-implementations of the per-node update rules, written
//! directly from the update equations over a dense weight table. They share no
//! code with the library beyond the state structs.

#![allow(dead_code)]

use spectra::asyncsim::AsyncNodeState;
use spectra::distsync::NodeState;
use spectra::{Edge, SparseGraph};

/// Weighted 5-node fixture: a 5-cycle plus one chord, distinct weights.
pub fn five_node_graph() -> SparseGraph {
    let edges = vec![
        Edge { u: 0, v: 1, w: 1.0 },
        Edge { u: 1, v: 2, w: 0.5 },
        Edge { u: 2, v: 3, w: 1.5 },
        Edge { u: 3, v: 4, w: 0.75 },
        Edge { u: 4, v: 0, w: 1.25 },
        Edge { u: 1, v: 3, w: 2.0 },
    ];
    SparseGraph::similarity(5, edges).unwrap()
}

pub fn dense_weights(g: &SparseGraph) -> Vec<Vec<f64>> {
    let n = g.n();
    let mut a = vec![vec![0.0; n]; n];
    for e in g.edges() {
        a[e.u][e.v] = e.w;
        a[e.v][e.u] = e.w;
    }
    a
}

/// One synchronous step. `squared` selects `A²`, otherwise `A + shift I`.
#[allow(clippy::too_many_arguments)]
pub fn sync_step_oracle(
    prev: &[NodeState],
    a: &[Vec<f64>],
    squared: bool,
    shift: f64,
    gain_a: f64,
    gain_b: f64,
    n_scale: f64,
    xi: &[f64],
) -> Vec<NodeState> {
    let n = prev.len();
    let l = prev[0].x.len();
    let prod = |x: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..n).map(|v| (0..l).map(|k| (0..n).map(|w| a[v][w] * x[w][k]).sum()).collect()).collect()
    };
    let x_old: Vec<Vec<f64>> = prev.iter().map(|s| s.x.clone()).collect();
    let p_old = prod(&x_old);

    let mut x_new = vec![vec![0.0; l]; n];
    for u in 0..n {
        let s = &prev[u];
        let phi_mass: f64 = s.phi.iter().map(|v| v.abs()).sum();
        let y = 1.0f64.max(s.psi.abs()).max(phi_mass / (n_scale * (l * l) as f64));
        for k in 0..l {
            let ax = if squared {
                (0..n).map(|v| a[u][v] * p_old[v][k]).sum::<f64>()
            } else {
                p_old[u][k] + shift * s.x[k]
            };
            let mut xphi = 0.0;
            for j in 0..l {
                xphi += s.x[j] * s.phi[j * l + k];
            }
            x_new[u][k] = s.x[k] + gain_a / y * (ax - n_scale * xphi + xi[u * l + k]);
        }
    }
    let p_new = prod(&x_new);

    let mut out = Vec::with_capacity(n);
    for u in 0..n {
        let mut f = vec![0.0; l * l];
        for i in 0..l {
            for j in 0..l {
                f[i * l + j] = if squared {
                    p_new[u][i] * p_new[u][j]
                } else {
                    x_new[u][i] * (p_new[u][j] + shift * x_new[u][j])
                };
            }
        }
        let g: f64 = x_new[u].iter().map(|v| v * v).sum();
        let mut phi = prev[u].phi.clone();
        let mut psi = prev[u].psi;
        for v in 0..n {
            if a[u][v] != 0.0 {
                for e in 0..l * l {
                    phi[e] += gain_b * (prev[v].phi[e] - prev[u].phi[e]);
                }
                psi += gain_b * (prev[v].psi - prev[u].psi);
            }
        }
        for e in 0..l * l {
            phi[e] += f[e] - prev[u].f_prev[e];
        }
        psi += g - prev[u].g_prev;
        out.push(NodeState { x: x_new[u].clone(), phi, psi, f_prev: f, g_prev: g, pi: p_new[u].clone() });
    }
    out
}

/// Local clock tick at `u`: alternate between refreshing `Π_u` and moving `X_u`.
pub fn async_local_oracle(states: &mut [AsyncNodeState], a: &[Vec<f64>], u: usize, gain: f64, n_scale: f64, xi: &[f64]) {
    let n = states.len();
    let l = states[u].x.len();
    if states[u].w {
        let phi_mass: f64 = states[u].phi.iter().map(|v| v.abs()).sum();
        let y = 1.0f64.max(states[u].psi.abs()).max(phi_mass / (n_scale * (l * l) as f64));
        let mut next = vec![0.0; l];
        for k in 0..l {
            let mut acc = 0.0;
            for v in 0..n {
                acc += a[u][v] * states[v].pi[k];
            }
            let mut xphi = 0.0;
            for j in 0..l {
                xphi += states[u].x[j] * states[u].phi[j * l + k];
            }
            next[k] = states[u].x[k] + gain * (acc - n_scale * xphi + xi[k]) / y;
        }
        states[u].x = next;
    } else {
        for k in 0..l {
            let mut acc = 0.0;
            for v in 0..n {
                acc += a[u][v] * states[v].x[k];
            }
            states[u].pi[k] = acc;
        }
    }
    states[u].w = !states[u].w;
}

/// Edge clock tick on `{u, v}`: average, then inject the change of `f` and `g`
/// since each endpoint's last gossip and refresh its snapshots.
pub fn async_gossip_oracle(states: &mut [AsyncNodeState], u: usize, v: usize) {
    let l = states[u].x.len();
    for e in 0..l * l {
        let avg = 0.5 * (states[u].phi[e] + states[v].phi[e]);
        let (i, j) = (e / l, e % l);
        for z in [u, v] {
            let val = avg + states[z].pi[i] * states[z].pi[j] - states[z].pi0[i] * states[z].pi0[j];
            states[z].phi[e] = val;
        }
    }
    let avg = 0.5 * (states[u].psi + states[v].psi);
    for z in [u, v] {
        let g: f64 = states[z].x.iter().map(|x| x * x).sum();
        let g0: f64 = states[z].x0.iter().map(|x| x * x).sum();
        states[z].psi = avg + g - g0;
    }
    for z in [u, v] {
        states[z].x0 = states[z].x.clone();
        states[z].pi0 = states[z].pi.clone();
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Entrywise `|a − b| / max(1, |b|)`.
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}
