//! Synchronous distributed eigenvector iteration.
//!
//! Every node keeps its row `X_u` of the coordinate matrix together with
//! gossiped estimates `Phi_u ≈ X'ÃX / N` and `Psi_u ≈ ||X||² / N`, so the
//! Oja-style update of `X_u` needs only neighbour messages. The centralized
//! Borkar–Meyn iteration is provided as a reference.
//!
//! One step runs three neighbour rounds, all from the time-`t` snapshot
//! except the second:
//! 1. coordinates: `X_u += a/Y_u · ((ÃX)_u − N X_u Phi_u + xi_u)`, where
//!    `(ÃX)_u` is built from the neighbours' cached products `Pi_v = (AX)_v`;
//! 2. products: `Pi_u = Σ_v A_uv X_v` from the new coordinates, giving the
//!    new local terms `f_u` and `g_u = X_u X_u'`;
//! 3. gossip: `Phi_u += b Σ_{v~u} (Phi_v − Phi_u) + f_u(t+1) − f_u(t)`, and
//!    the same for `Psi_u` with `g`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{GraphKind, SparseGraph};
use crate::linalg::{LinearOperator, Order};
use crate::rng::{counter_rng, stream, stream_rng};
use crate::spectral::{self, Spectrum};
use crate::trace::Trace;

/// Absolute state value treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

/// Node counts from which a step is split across threads.
const PARALLEL_MIN_NODES: usize = 4096;

pub const SYNC_COLUMNS: [&str; 5] = ["t", "subspace_residual", "gram_error", "phi_track_err", "psi_track_err"];

/// How the adjacency matrix is made positive semidefinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdMode {
    /// `A + (Δ + ε) I` with `Δ` the largest absolute row sum.
    DiagonalShift(f64),
    /// `A²`, applied as two neighbour products.
    Squared,
}

/// The preconditioned operator `Ã` on a connected graph.
#[derive(Clone, Debug)]
pub struct PsdOperator {
    graph: SparseGraph,
    nodes: Vec<usize>,
    mode: PsdMode,
    shift: f64,
}

impl PsdOperator {
    pub fn graph(&self) -> &SparseGraph {
        &self.graph
    }

    /// Original indices of the nodes the operator acts on.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn mode(&self) -> PsdMode {
        self.mode
    }

    /// Diagonal added in shift mode, zero otherwise.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Upper bound on ‖Ã‖₂.
    pub fn norm_bound(&self) -> f64 {
        let delta = self.graph.max_abs_row_sum();
        match self.mode {
            PsdMode::DiagonalShift(_) => delta + self.shift,
            PsdMode::Squared => delta * delta,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let a = self.graph.to_dense();
        match self.mode {
            PsdMode::DiagonalShift(_) => a + DMatrix::identity(self.n(), self.n()) * self.shift,
            PsdMode::Squared => &a * &a,
        }
    }

    /// Top-`l` eigenpairs of `Ã` (largest values; `Ã` is PSD).
    pub fn top_eigenspace(&self, l: usize) -> Result<Spectrum> {
        if self.n() <= spectral::JACOBI_MAX_DIM {
            spectral::eig_top(&self.to_dense(), l)
        } else {
            spectral::eig_top_operator(self, l, Order::Largest)
        }
    }
}

impl LinearOperator for PsdOperator {
    fn dim(&self) -> usize {
        self.graph.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self.mode {
            PsdMode::DiagonalShift(_) => {
                self.graph.mul_vec(x, y);
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi += self.shift * xi;
                }
            }
            PsdMode::Squared => {
                let mut tmp = vec![0.0; x.len()];
                self.graph.mul_vec(x, &mut tmp);
                self.graph.mul_vec(&tmp, y);
            }
        }
    }
}

/// Builds the PSD operator. A disconnected graph is restricted to its
/// largest component, with a warning.
pub fn psd_precondition(graph: &SparseGraph, mode: PsdMode) -> Result<PsdOperator> {
    if graph.kind() != GraphKind::Similarity {
        return Err(Error::param("PSD preconditioning needs a similarity graph"));
    }
    if let PsdMode::DiagonalShift(eps) = mode {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::param(format!("diagonal shift epsilon must be positive, got {eps}")));
        }
    }
    if graph.n_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let (graph, nodes) = if graph.is_connected() {
        (graph.clone(), (0..graph.n()).collect())
    } else {
        let comps = graph.components();
        let keep = comps[0].clone();
        log::warn!(
            "graph has {} components; restricting to the largest ({} of {} nodes)",
            comps.len(),
            keep.len(),
            graph.n()
        );
        (graph.induced(&keep)?, keep)
    };
    let shift = match mode {
        PsdMode::DiagonalShift(eps) => graph.max_abs_row_sum() + eps,
        PsdMode::Squared => 0.0,
    };
    Ok(PsdOperator { graph, nodes, mode, shift })
}

type GainFn = Arc<dyn Fn(u64) -> f64 + Send + Sync>;

/// Step sizes `a(t)` for coordinates and `b(t)` for gossip, `t ≥ 1`.
#[derive(Clone)]
pub enum GainSchedule {
    /// `a = 1/(s ln(s+1))`, `b = s^(-2/3)` evaluated at `s = t + offset`.
    Decaying { offset: u64 },
    Custom { a: GainFn, b: GainFn },
}

impl fmt::Debug for GainSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainSchedule::Decaying { offset } => write!(f, "Decaying {{ offset: {offset} }}"),
            GainSchedule::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl GainSchedule {
    pub fn decaying() -> Self {
        GainSchedule::Decaying { offset: 0 }
    }

    pub fn decaying_with_offset(offset: u64) -> Self {
        GainSchedule::Decaying { offset }
    }

    /// Decaying gains started late enough that the first gossip step is a
    /// contraction (`b · 2 d_max ≤ 1`) and `a · ‖Ã‖ ≤ 1/2`.
    pub fn decaying_stable_for(op: &PsdOperator) -> Self {
        GainSchedule::Decaying { offset: stable_offset(op.graph().max_degree() as f64, op.norm_bound()) }
    }

    pub fn custom(a: impl Fn(u64) -> f64 + Send + Sync + 'static, b: impl Fn(u64) -> f64 + Send + Sync + 'static) -> Self {
        GainSchedule::Custom { a: Arc::new(a), b: Arc::new(b) }
    }

    pub fn constant(a: f64, b: f64) -> Self {
        Self::custom(move |_| a, move |_| b)
    }

    pub fn a(&self, t: u64) -> f64 {
        match self {
            GainSchedule::Decaying { offset } => {
                let s = (t + offset) as f64;
                1.0 / (s * (s + 1.0).ln())
            }
            GainSchedule::Custom { a, .. } => a(t),
        }
    }

    pub fn b(&self, t: u64) -> f64 {
        match self {
            GainSchedule::Decaying { offset } => ((t + offset) as f64).powf(-2.0 / 3.0),
            GainSchedule::Custom { b, .. } => b(t),
        }
    }
}

/// Smallest offset for which the decaying gains satisfy the two step-size
/// limits of [`GainSchedule::decaying_stable_for`] from `t = 1`.
pub fn stable_offset(max_degree: f64, norm_bound: f64) -> u64 {
    let ok = |s: u64| {
        let g = GainSchedule::decaying_with_offset(s - 1);
        g.b(1) * 2.0 * max_degree <= 1.0 && g.a(1) * norm_bound <= 0.5
    };
    let mut hi = 1u64;
    while !ok(hi) {
        hi *= 2;
    }
    let mut lo = hi / 2;
    if lo == 0 {
        return 0;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi - 1
}

/// Per-node state; matrices are row-major `L×L`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeState {
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: f64,
    /// `f_u(t)`, the last local term injected into `phi`.
    pub f_prev: Vec<f64>,
    /// `g_u(t)`, the last local term injected into `psi`.
    pub g_prev: f64,
    /// Cached `Σ_v A_uv X_v(t)`.
    pub pi: Vec<f64>,
}

impl NodeState {
    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn is_sane(&self) -> bool {
        let ok = |v: f64| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT;
        self.x.iter().chain(&self.phi).chain(&self.pi).all(|&v| ok(v)) && ok(self.psi)
    }
}

/// Read access to node states. Per-node update rules go through this trait
/// so tests can record which nodes each rule touches.
pub trait NodeView {
    fn node(&self, v: usize) -> &NodeState;
}

impl NodeView for [NodeState] {
    fn node(&self, v: usize) -> &NodeState {
        &self[v]
    }
}

impl NodeView for Vec<NodeState> {
    fn node(&self, v: usize) -> &NodeState {
        &self[v]
    }
}

/// `(ÃX)_u` from the node's own row and the neighbours' cached products.
fn operator_row<V: NodeView + ?Sized>(u: usize, view: &V, op: &PsdOperator, out: &mut [f64]) {
    let me = view.node(u);
    match op.mode {
        PsdMode::DiagonalShift(_) => {
            for (o, (p, x)) in out.iter_mut().zip(me.pi.iter().zip(&me.x)) {
                *o = p + op.shift * x;
            }
        }
        PsdMode::Squared => {
            out.iter_mut().for_each(|o| *o = 0.0);
            for &(v, w) in op.graph.neighbors(u) {
                for (o, p) in out.iter_mut().zip(&view.node(v).pi) {
                    *o += w * p;
                }
            }
        }
    }
}

/// `Y_u = max(1, |Psi_u|, Σ|Phi_u| / (N L²))`.
pub fn denominator(state: &NodeState, n_scale: f64) -> f64 {
    let l = state.dim() as f64;
    let phi_mass: f64 = state.phi.iter().map(|v| v.abs()).sum();
    1f64.max(state.psi.abs()).max(phi_mass / (n_scale * l * l))
}

/// Round 1: the new coordinate row of node `u`.
pub fn coordinate_update<V: NodeView + ?Sized>(
    u: usize,
    view: &V,
    op: &PsdOperator,
    a: f64,
    n_scale: f64,
    xi: &[f64],
    out: &mut [f64],
) {
    let me = view.node(u);
    let l = me.dim();
    operator_row(u, view, op, out);
    let y = denominator(me, n_scale);
    for m in 0..l {
        let x_phi: f64 = (0..l).map(|k| me.x[k] * me.phi[k * l + m]).sum();
        out[m] = me.x[m] + a / y * (out[m] - n_scale * x_phi + xi[m]);
    }
}

/// Round 2: `Pi_u = Σ_v A_uv X_v`.
pub fn local_product<V: NodeView + ?Sized>(u: usize, view: &V, graph: &SparseGraph, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for &(v, w) in graph.neighbors(u) {
        for (o, x) in out.iter_mut().zip(&view.node(v).x) {
            *o += w * x;
        }
    }
}

/// Local gossip input `f_u`: `X_u'(ÃX)_u` in shift mode, `Pi_u'Pi_u` when squared.
pub fn local_f(x: &[f64], pi: &[f64], op: &PsdOperator) -> Vec<f64> {
    let l = x.len();
    let mut f = vec![0.0; l * l];
    match op.mode {
        PsdMode::DiagonalShift(_) => {
            for k in 0..l {
                for m in 0..l {
                    f[k * l + m] = x[k] * (pi[m] + op.shift * x[m]);
                }
            }
        }
        PsdMode::Squared => {
            for k in 0..l {
                for m in 0..l {
                    f[k * l + m] = pi[k] * pi[m];
                }
            }
        }
    }
    f
}

/// Round 3: the averaging part of the `Phi`/`Psi` update, before the local
/// terms are injected.
pub fn gossip_mix<V: NodeView + ?Sized>(u: usize, view: &V, graph: &SparseGraph, b: f64) -> (Vec<f64>, f64) {
    let me = view.node(u);
    let mut phi = me.phi.clone();
    let mut psi = me.psi;
    for &(v, _) in graph.neighbors(u) {
        let other = view.node(v);
        for (p, (q, mine)) in phi.iter_mut().zip(other.phi.iter().zip(&me.phi)) {
            *p += b * (q - mine);
        }
        psi += b * (other.psi - me.psi);
    }
    (phi, psi)
}

/// Run parameters of the synchronous iteration.
#[derive(Clone, Debug)]
pub struct SyncConfig {
    pub gains: GainSchedule,
    pub noise_std: f64,
    /// Number of steps.
    pub horizon: u64,
    pub seed: u64,
    /// Steps between trace samples.
    pub trace_every: u64,
    /// Value of `N` the nodes use; defaults to the true node count.
    pub n_override: Option<f64>,
}

impl SyncConfig {
    pub fn new(gains: GainSchedule, horizon: u64, seed: u64) -> Self {
        SyncConfig { gains, noise_std: 1e-3, horizon, seed, trace_every: 1000, n_override: None }
    }

    fn n_scale(&self, op: &PsdOperator) -> f64 {
        self.n_override.unwrap_or(op.n() as f64)
    }
}

/// Noise `xi(t+1)` for all nodes, node-major.
pub fn step_noise(seed: u64, t: u64, n: usize, l: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n * l];
    }
    let mut rng = counter_rng(seed, stream::SYNC_NOISE_BASE + t, 0);
    (0..n * l).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Initial states: `X ~ N(0, 1/N)` and gossip variables equal to their
/// local terms.
pub fn init_states(op: &PsdOperator, l: usize, seed: u64) -> Vec<NodeState> {
    let n = op.n();
    let mut rng = stream_rng(seed, stream::SYNC_INIT);
    let sd = 1.0 / (n as f64).sqrt();
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..l).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let mut states: Vec<NodeState> = xs
        .into_iter()
        .map(|x| NodeState { x, phi: vec![0.0; l * l], psi: 0.0, f_prev: vec![0.0; l * l], g_prev: 0.0, pi: vec![0.0; l] })
        .collect();
    let mut pis = vec![vec![0.0; l]; n];
    for (u, p) in pis.iter_mut().enumerate() {
        local_product(u, states.as_slice(), op.graph(), p);
    }
    for (s, pi) in states.iter_mut().zip(pis) {
        let f = local_f(&s.x, &pi, op);
        let g: f64 = s.x.iter().map(|v| v * v).sum();
        s.phi = f.clone();
        s.f_prev = f;
        s.psi = g;
        s.g_prev = g;
        s.pi = pi;
    }
    states
}

fn for_each_node<T: Send>(items: &mut [T], body: impl Fn(usize, &mut T) + Sync + Send) {
    if items.len() >= PARALLEL_MIN_NODES {
        items.par_iter_mut().enumerate().for_each(|(u, s)| body(u, s));
    } else {
        items.iter_mut().enumerate().for_each(|(u, s)| body(u, s));
    }
}

/// One synchronous step from `prev` (time `t`) into `next` (time `t+1`).
pub fn step_sync_into(prev: &[NodeState], next: &mut [NodeState], op: &PsdOperator, t: u64, cfg: &SyncConfig) -> Result<()> {
    let n = op.n();
    if prev.len() != n || next.len() != n {
        return Err(Error::Dimension(format!("{} states for {} nodes", prev.len(), n)));
    }
    if t == 0 {
        return Err(Error::param("time index starts at 1"));
    }
    let l = prev[0].dim();
    let a = cfg.gains.a(t);
    let b = cfg.gains.b(t);
    let n_scale = cfg.n_scale(op);
    let xi = step_noise(cfg.seed, t, n, l, cfg.noise_std);

    for_each_node(next, |u, s| coordinate_update(u, prev, op, a, n_scale, &xi[u * l..(u + 1) * l], &mut s.x));

    let mut pis = vec![0.0; n * l];
    {
        let view: &[NodeState] = next;
        for_each_node(&mut pis.chunks_mut(l).collect::<Vec<_>>(), |u, p| local_product(u, view, op.graph(), p));
    }

    for_each_node(next, |u, s| {
        let old = &prev[u];
        s.pi.copy_from_slice(&pis[u * l..(u + 1) * l]);
        let f = local_f(&s.x, &s.pi, op);
        let g: f64 = s.x.iter().map(|v| v * v).sum();
        let (phi, psi) = gossip_mix(u, prev, op.graph(), b);
        for (k, p) in s.phi.iter_mut().enumerate() {
            *p = phi[k] + f[k] - old.f_prev[k];
        }
        s.psi = psi + g - old.g_prev;
        s.f_prev = f;
        s.g_prev = g;
    });

    if let Some(u) = next.iter().position(|s| !s.is_sane()) {
        return Err(Error::Divergence { t: (t + 1) as f64, node: u, trace: None });
    }
    Ok(())
}

/// One synchronous step; returns the states at time `t+1`.
pub fn step_sync(states: &[NodeState], op: &PsdOperator, t: u64, cfg: &SyncConfig) -> Result<Vec<NodeState>> {
    let mut next = states.to_vec();
    step_sync_into(states, &mut next, op, t, cfg)?;
    Ok(next)
}

/// Coordinate matrix `X` (N×L) of a state vector.
pub fn coordinates(states: &[NodeState]) -> DMatrix<f64> {
    let l = states.first().map_or(0, NodeState::dim);
    DMatrix::from_fn(states.len(), l, |u, k| states[u].x[k])
}

/// `‖X'X − I‖_F`.
pub fn gram_error(x: &DMatrix<f64>) -> f64 {
    let l = x.ncols();
    (x.transpose() * x - DMatrix::identity(l, l)).norm()
}

/// Worst entrywise gaps `max_u |N Phi_u − Σ_v f_v|` and `max_u |N Psi_u − Σ_v g_v|`.
pub fn tracking_errors(states: &[NodeState], n_scale: f64) -> (f64, f64) {
    let ll = states.first().map_or(0, |s| s.phi.len());
    let mut fsum = vec![0.0; ll];
    let mut gsum = 0.0;
    for s in states {
        fsum.iter_mut().zip(&s.f_prev).for_each(|(a, b)| *a += b);
        gsum += s.g_prev;
    }
    let mut phi_err = 0.0f64;
    let mut psi_err = 0.0f64;
    for s in states {
        for (p, f) in s.phi.iter().zip(&fsum) {
            phi_err = phi_err.max((n_scale * p - f).abs());
        }
        psi_err = psi_err.max((n_scale * s.psi - gsum).abs());
    }
    (phi_err, psi_err)
}

fn sample(states: &[NodeState], basis: &Spectrum, n_scale: f64, t: u64) -> Result<Vec<f64>> {
    let x = coordinates(states);
    let residual = spectral::subspace_residual(&x, basis)?;
    let (pe, se) = tracking_errors(states, n_scale);
    Ok(vec![t as f64, residual, gram_error(&x), pe, se])
}

/// Result of [`run_sync`].
#[derive(Clone, Debug)]
pub struct SyncRun {
    pub trace: Trace,
    pub states: Vec<NodeState>,
    pub operator: PsdOperator,
    /// ‖X(1)‖_F.
    pub initial_norm: f64,
    /// `Σ a(s)` over the steps taken.
    pub sum_a: f64,
    /// `Σ a(s) ‖xi(s+1)‖`.
    pub noise_mass: f64,
    /// Largest ‖X(t)‖_F seen.
    pub max_norm: f64,
}

impl SyncRun {
    /// Growth constant `K₁ = ‖Ã‖ + N²L²` bounding the update map by `K₁ ‖X‖`.
    pub fn growth_constant(&self) -> f64 {
        let n = self.operator.n() as f64;
        let l = self.states.first().map_or(0, NodeState::dim) as f64;
        self.operator.norm_bound() + n * n * l * l
    }

    /// Checks `max_t ‖X(t)‖ ≤ exp(K₁ Σa)(‖X(1)‖ + M̂)`.
    pub fn bound_holds(&self) -> bool {
        let bound = (self.growth_constant() * self.sum_a).exp() * (self.initial_norm + self.noise_mass);
        self.max_norm <= bound
    }

    pub fn final_metrics(&self) -> &[f64] {
        self.trace.last().expect("trace has the initial sample")
    }
}

/// Runs the synchronous iteration for `cfg.horizon` steps.
pub fn run_sync(graph: &SparseGraph, l: usize, mode: PsdMode, cfg: &SyncConfig) -> Result<SyncRun> {
    let op = psd_precondition(graph, mode)?;
    if l == 0 || l > op.n() {
        return Err(Error::param(format!("L={l} out of range for {} nodes", op.n())));
    }
    if cfg.trace_every == 0 {
        return Err(Error::param("trace_every must be positive"));
    }
    if !(cfg.noise_std >= 0.0) {
        return Err(Error::param("noise_std must be nonnegative"));
    }
    let n_scale = cfg.n_scale(&op);
    if !(n_scale > 0.0) {
        return Err(Error::param("N override must be positive"));
    }
    let basis = op.top_eigenspace(l)?;
    let mut cur = init_states(&op, l, cfg.seed);
    let mut next = cur.clone();
    let mut trace = Trace::new(SYNC_COLUMNS);
    trace.push(sample(&cur, &basis, n_scale, 1)?)?;

    let initial_norm = coordinates(&cur).norm();
    let mut run = SyncRun { trace, states: Vec::new(), operator: op, initial_norm, sum_a: 0.0, noise_mass: 0.0, max_norm: initial_norm };
    for t in 1..=cfg.horizon {
        if let Err(e) = step_sync_into(&cur, &mut next, &run.operator, t, cfg) {
            return Err(match e {
                Error::Divergence { t, node, .. } => Error::Divergence { t, node, trace: Some(Box::new(run.trace)) },
                other => other,
            });
        }
        std::mem::swap(&mut cur, &mut next);
        let a = cfg.gains.a(t);
        run.sum_a += a;
        if cfg.noise_std > 0.0 {
            let xi = step_noise(cfg.seed, t, run.operator.n(), l, cfg.noise_std);
            run.noise_mass += a * xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        run.max_norm = run.max_norm.max(cur.iter().flat_map(|s| &s.x).map(|v| v * v).sum::<f64>().sqrt());
        if t % cfg.trace_every == 0 || t == cfg.horizon {
            run.trace.push(sample(&cur, &basis, n_scale, t + 1)?)?;
        }
    }
    run.states = cur;
    Ok(run)
}

/// Centralized reference step `X += a/Z (ÃX − X X'ÃX + xi)`, `Z = 1 + ΣX²`.
pub fn step_borkar_meyn(x: &DMatrix<f64>, a_t: f64, op: &impl LinearOperator, noise_std: f64, seed: u64, t: u64) -> Result<DMatrix<f64>> {
    let (n, l) = x.shape();
    if op.dim() != n {
        return Err(Error::Dimension(format!("operator is {}-dimensional, X has {n} rows", op.dim())));
    }
    let mut ax = DMatrix::zeros(n, l);
    let mut col = vec![0.0; n];
    for k in 0..l {
        op.apply(x.column(k).as_slice(), &mut col);
        ax.column_mut(k).copy_from_slice(&col);
    }
    let z = 1.0 + x.norm_squared();
    let xi = step_noise(seed, t, n, l, noise_std);
    let noise = DMatrix::from_fn(n, l, |u, k| xi[u * l + k]);
    let xtax = x.transpose() * &ax;
    Ok(x + (ax - x * xtax + noise) * (a_t / z))
}

/// Finite-horizon verdicts on the gain conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainReport {
    pub horizon: u64,
    pub sum_a: f64,
    pub sum_b: f64,
    pub sum_a2: f64,
    pub sum_b2: f64,
    /// Steps with `a` or `b` outside `[0, 1]`.
    pub unit_interval_violations: u64,
    /// Last step outside `[0, 1]`, 0 if none.
    pub last_violation: u64,
    pub in_unit_interval: bool,
    pub sums_diverge: bool,
    pub squares_converge: bool,
    pub ratio_decreasing: bool,
    pub pass: bool,
}

/// Condensed terms `2^j h(2^j)`, `j = 0..=log2(horizon)`.
fn condensed(h: impl Fn(u64) -> f64, horizon: u64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = 1u64;
    while t <= horizon {
        out.push(t as f64 * h(t));
        t *= 2;
    }
    out
}

/// Growth of `j · c_j` between `j/2` and `j` at the end of the condensed
/// sequence; near or above 1 means the underlying series diverges like or
/// slower than a harmonic sum.
fn condensed_growth(c: &[f64]) -> f64 {
    let j = c.len() - 1;
    let half = j / 2;
    if half == 0 || c[half] == 0.0 {
        return if c[j] > 0.0 { f64::INFINITY } else { 0.0 };
    }
    (j as f64 * c[j]) / (half as f64 * c[half])
}

const DIVERGENT_GROWTH: f64 = 0.9;

/// Numerically checks the gain conditions over `1..=horizon`:
/// unit interval (a finite prefix of violations is tolerated, up to 1% of
/// the horizon), divergence of `Σa` and `Σb` and convergence of `Σa²` and
/// `Σb²` by Cauchy condensation, and a decreasing tail of
/// `a/b · exp(K Σa)`.
pub fn validate_gains(gains: &GainSchedule, horizon: u64, k_const: f64) -> Result<GainReport> {
    if horizon < 64 {
        return Err(Error::param("horizon too short to judge the gain conditions"));
    }
    if !(k_const > 0.0) {
        return Err(Error::param("K must be positive"));
    }
    let (mut sa, mut sb, mut sa2, mut sb2) = (0.0, 0.0, 0.0, 0.0);
    let mut violations = 0;
    let mut last_violation = 0;
    let tail_start = horizon / 2;
    let probes = 64u64;
    let stride = ((horizon - tail_start) / probes).max(1);
    let mut ratios = Vec::new();
    for t in 1..=horizon {
        let (a, b) = (gains.a(t), gains.b(t));
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            violations += 1;
            last_violation = t;
        }
        sa += a;
        sb += b;
        sa2 += a * a;
        sb2 += b * b;
        if t >= tail_start && (t - tail_start).is_multiple_of(stride) {
            ratios.push((a / b).ln() + k_const * sa);
        }
    }
    let in_unit_interval = last_violation * 100 <= horizon;
    let sums_diverge = condensed_growth(&condensed(|t| gains.a(t), horizon)) >= DIVERGENT_GROWTH
        && condensed_growth(&condensed(|t| gains.b(t), horizon)) >= DIVERGENT_GROWTH;
    let squares_converge = condensed_growth(&condensed(|t| gains.a(t).powi(2), horizon)) < DIVERGENT_GROWTH
        && condensed_growth(&condensed(|t| gains.b(t).powi(2), horizon)) < DIVERGENT_GROWTH;
    // compared in log space, the ratio itself can overflow
    let ratio_decreasing = ratios.windows(2).all(|w| w[1] <= w[0]) && ratios.last() < ratios.first();
    Ok(GainReport {
        horizon,
        sum_a: sa,
        sum_b: sb,
        sum_a2: sa2,
        sum_b2: sb2,
        unit_interval_violations: violations,
        last_violation,
        in_unit_interval,
        sums_diverge,
        squares_converge,
        ratio_decreasing,
        pass: in_unit_interval && sums_diverge && squares_converge && ratio_decreasing,
    })
}
