//! Event-driven asynchronous variant of the distributed iteration.
//!
//! Nodes wake at Poisson rate λ and alternate between refreshing their
//! partial product `Pi_u = Σ_v A_uv X_v` and updating their coordinates from
//! the neighbours' products, which applies `A²` without forming it. Each
//! edge fires at rate μ and gossips `Phi` and `Psi` between its endpoints,
//! injecting the change in the local terms since the endpoint's last gossip.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::distsync::{gram_error, psd_precondition, PsdMode, DIVERGENCE_LIMIT};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::rng::{stream, stream_rng, unit_f64};
use crate::spectral::{self, Spectrum};
use crate::trace::Trace;

pub const ASYNC_COLUMNS: [&str; 4] = ["t_sim", "residual", "gram_offdiag_max", "events_processed"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    /// Coordinate step γ.
    pub gain: f64,
    /// Local update rate λ per node.
    pub node_rate: f64,
    /// Gossip rate μ per edge.
    pub edge_rate: f64,
    pub horizon: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub trace_every: f64,
    /// Value of `N` the nodes use; defaults to the true node count.
    pub n_override: Option<f64>,
}

impl SimConfig {
    /// γ = 0.001, λ = 0.2, μ = 10, no noise.
    pub fn benchmark(horizon: f64, seed: u64) -> Self {
        SimConfig { gain: 0.001, node_rate: 0.2, edge_rate: 10.0, horizon, noise_std: 0.0, seed, trace_every: 10.0, n_override: None }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::param(format!("gain must be positive, got {}", self.gain)));
        }
        if !finite_nonneg(self.node_rate) || !finite_nonneg(self.edge_rate) {
            return Err(Error::param("event rates must be finite and nonnegative"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon must be positive"));
        }
        if !finite_nonneg(self.noise_std) {
            return Err(Error::param("noise_std must be nonnegative"));
        }
        if !(self.trace_every > 0.0) {
            return Err(Error::param("trace_every must be positive"));
        }
        if self.n_override.is_some_and(|n| !(n > 0.0)) {
            return Err(Error::param("N override must be positive"));
        }
        if self.edge_rate <= self.node_rate {
            log::warn!("gossip rate {} does not exceed update rate {}", self.edge_rate, self.node_rate);
        }
        Ok(())
    }
}

/// Per-node state; `phi` is row-major `L×L`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsyncNodeState {
    pub x: Vec<f64>,
    pub pi: Vec<f64>,
    /// Next local event updates coordinates when set, refreshes `pi` otherwise.
    pub w: bool,
    pub x0: Vec<f64>,
    pub pi0: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: f64,
}

impl AsyncNodeState {
    pub fn new(x: Vec<f64>) -> Self {
        let l = x.len();
        AsyncNodeState { x0: x.clone(), x, pi: vec![0.0; l], w: false, pi0: vec![0.0; l], phi: vec![0.0; l * l], psi: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// `Pi'Pi`, row-major.
pub fn f2(pi: &[f64]) -> Vec<f64> {
    let l = pi.len();
    let mut out = vec![0.0; l * l];
    for k in 0..l {
        for m in 0..l {
            out[k * l + m] = pi[k] * pi[m];
        }
    }
    out
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn sane(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && x.abs() <= DIVERGENCE_LIMIT)
}

/// Local event at `u`. Reads neighbours, mutates only `states[u]`.
/// `xi` is the noise added to the coordinate bracket (ignored on a product refresh).
pub fn update_local(u: usize, states: &mut [AsyncNodeState], graph: &SparseGraph, gain: f64, n_scale: f64, xi: &[f64]) -> Result<()> {
    let l = states[u].dim();
    let mut acc = vec![0.0; l];
    let w = states[u].w;
    for &(v, a) in graph.neighbors(u) {
        let src = if w { &states[v].pi } else { &states[v].x };
        for (o, s) in acc.iter_mut().zip(src) {
            *o += a * s;
        }
    }
    let me = &mut states[u];
    if w {
        let phi_mass: f64 = me.phi.iter().map(|v| v.abs()).sum();
        let y = 1f64.max(me.psi.abs()).max(phi_mass / (n_scale * (l * l) as f64));
        let x_phi: Vec<f64> = (0..l).map(|m| (0..l).map(|k| me.x[k] * me.phi[k * l + m]).sum()).collect();
        for m in 0..l {
            me.x[m] += gain * (acc[m] - n_scale * x_phi[m] + xi[m]) / y;
        }
        if !sane(&me.x) {
            return Err(Error::Divergence { t: f64::NAN, node: u, trace: None });
        }
    } else {
        me.pi = acc;
    }
    me.w = !w;
    Ok(())
}

/// Pairwise gossip of `Phi` (input `f2(Pi)`) and `Psi` (input `||X||²`)
/// across edge `(u, v)`, then snapshot refresh at both ends.
pub fn gossip(u: usize, v: usize, states: &mut [AsyncNodeState], graph: &SparseGraph) -> Result<()> {
    if u == v || graph.weight(u, v).is_none() {
        return Err(Error::NotAnEdge { u, v });
    }
    let (su, sv) = if u < v {
        let (lo, hi) = states.split_at_mut(v);
        (&mut lo[u], &mut hi[0])
    } else {
        let (lo, hi) = states.split_at_mut(u);
        (&mut hi[0], &mut lo[v])
    };
    let l = su.dim();
    for k in 0..l {
        for m in 0..l {
            let i = k * l + m;
            let avg = (su.phi[i] + sv.phi[i]) / 2.0;
            su.phi[i] = avg + (su.pi[k] * su.pi[m] - su.pi0[k] * su.pi0[m]);
            sv.phi[i] = avg + (sv.pi[k] * sv.pi[m] - sv.pi0[k] * sv.pi0[m]);
        }
    }
    let avg = (su.psi + sv.psi) / 2.0;
    su.psi = avg + (sq_norm(&su.x) - sq_norm(&su.x0));
    sv.psi = avg + (sq_norm(&sv.x) - sq_norm(&sv.x0));
    for s in [&mut *su, &mut *sv] {
        s.x0.clone_from(&s.x);
        s.pi0.clone_from(&s.pi);
    }
    if !sane(&su.phi) || !su.psi.is_finite() {
        return Err(Error::Divergence { t: f64::NAN, node: u, trace: None });
    }
    if !sane(&sv.phi) || !sv.psi.is_finite() {
        return Err(Error::Divergence { t: f64::NAN, node: v, trace: None });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Event {
    Local(usize),
    Gossip(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Scheduled {
    time: f64,
    entity: usize,
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    // reversed so the max-heap pops the earliest time, then the lowest entity
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.entity.cmp(&self.entity))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exponential clocks: entity `u < N` is node `u`, entity `N + e` is edge `e`.
struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    clocks: Vec<ChaCha8Rng>,
    rates: Vec<f64>,
}

impl EventQueue {
    fn new(n_nodes: usize, n_edges: usize, node_rate: f64, edge_rate: f64, seed: u64) -> Self {
        let total = n_nodes + n_edges;
        let rates: Vec<f64> = (0..total).map(|e| if e < n_nodes { node_rate } else { edge_rate }).collect();
        let clocks: Vec<ChaCha8Rng> = (0..total).map(|e| stream_rng(seed, stream::ASYNC_CLOCK_BASE + e as u64)).collect();
        let mut q = EventQueue { heap: BinaryHeap::with_capacity(total), clocks, rates };
        for e in 0..total {
            q.schedule(e, 0.0);
        }
        q
    }

    fn schedule(&mut self, entity: usize, now: f64) {
        let rate = self.rates[entity];
        if rate > 0.0 {
            let u = unit_f64(&mut self.clocks[entity]);
            // 1 - u lies in (0, 1], so the logarithm is finite
            let dt = -(1.0 - u).ln() / rate;
            self.heap.push(Scheduled { time: now + dt, entity });
        }
    }

    fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|s| s.time)
    }

    fn pop(&mut self) -> Option<Scheduled> {
        let s = self.heap.pop()?;
        self.schedule(s.entity, s.time);
        Some(s)
    }
}

/// Simulation state; advance with [`AsyncSim::step`].
pub struct AsyncSim<'g> {
    graph: &'g SparseGraph,
    cfg: SimConfig,
    n_scale: f64,
    states: Vec<AsyncNodeState>,
    queue: EventQueue,
    noise: Vec<ChaCha8Rng>,
    events: u64,
    now: f64,
}

impl<'g> AsyncSim<'g> {
    /// Initial state: `X ~ N(0, 1/N)`, everything else zero, snapshots current.
    pub fn new(graph: &'g SparseGraph, l: usize, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n = graph.n();
        if l == 0 || l > n {
            return Err(Error::param(format!("L={l} out of range for {n} nodes")));
        }
        let mut rng = stream_rng(cfg.seed, stream::ASYNC_INIT);
        let sd = 1.0 / (n as f64).sqrt();
        let states = (0..n).map(|_| AsyncNodeState::new((0..l).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())).collect();
        Self::with_states(graph, states, cfg)
    }

    pub fn with_states(graph: &'g SparseGraph, states: Vec<AsyncNodeState>, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n = graph.n();
        if states.len() != n {
            return Err(Error::Dimension(format!("{} states for {n} nodes", states.len())));
        }
        let queue = EventQueue::new(n, graph.n_edges(), cfg.node_rate, cfg.edge_rate, cfg.seed);
        let noise = if cfg.noise_std > 0.0 {
            (0..n).map(|u| stream_rng(cfg.seed, stream::ASYNC_NOISE_BASE + u as u64)).collect()
        } else {
            Vec::new()
        };
        let n_scale = cfg.n_override.unwrap_or(n as f64);
        Ok(AsyncSim { graph, cfg, n_scale, states, queue, noise, events: 0, now: 0.0 })
    }

    pub fn states(&self) -> &[AsyncNodeState] {
        &self.states
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn events_processed(&self) -> u64 {
        self.events
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.queue.peek_time()
    }

    pub fn n_scale(&self) -> f64 {
        self.n_scale
    }

    /// Processes the next event, whatever its time.
    pub fn step(&mut self) -> Result<Option<(f64, Event)>> {
        let Some(s) = self.queue.pop() else { return Ok(None) };
        self.now = s.time;
        let n = self.graph.n();
        let event = if s.entity < n {
            let u = s.entity;
            let l = self.states[u].dim();
            let xi: Vec<f64> = if self.noise.is_empty() || !self.states[u].w {
                vec![0.0; l]
            } else {
                (0..l).map(|_| self.cfg.noise_std * self.noise[u].sample::<f64, _>(StandardNormal)).collect()
            };
            update_local(u, &mut self.states, self.graph, self.cfg.gain, self.n_scale, &xi).map_err(|e| self.stamp(e))?;
            Event::Local(u)
        } else {
            let e = self.graph.edges()[s.entity - n];
            gossip(e.u, e.v, &mut self.states, self.graph).map_err(|e| self.stamp(e))?;
            Event::Gossip(e.u, e.v)
        };
        self.events += 1;
        Ok(Some((s.time, event)))
    }

    fn stamp(&self, e: Error) -> Error {
        match e {
            Error::Divergence { node, trace, .. } => Error::Divergence { t: self.now, node, trace },
            other => other,
        }
    }

    /// Processes every event with time `≤ t`.
    pub fn run_until(&mut self, t: f64) -> Result<()> {
        while self.queue.peek_time().is_some_and(|next| next <= t) {
            self.step()?;
        }
        Ok(())
    }

    pub fn coordinates(&self) -> DMatrix<f64> {
        let l = self.states.first().map_or(0, AsyncNodeState::dim);
        DMatrix::from_fn(self.states.len(), l, |u, k| self.states[u].x[k])
    }
}

/// Largest `|(X'X)_km|` over `k ≠ m`.
pub fn gram_offdiag_max(x: &DMatrix<f64>) -> f64 {
    let g = x.transpose() * x;
    let mut worst = 0.0f64;
    for k in 0..g.nrows() {
        for m in k + 1..g.ncols() {
            worst = worst.max(g[(k, m)].abs());
        }
    }
    worst
}

#[derive(Clone, Debug)]
pub struct AsyncRun {
    pub trace: Trace,
    pub states: Vec<AsyncNodeState>,
    /// Original indices of the simulated nodes.
    pub nodes: Vec<usize>,
    pub events: u64,
    pub residual: f64,
    pub gram_offdiag_max: f64,
    /// `‖X'X − I‖_F` at the horizon.
    pub gram_error: f64,
}

fn sample(sim: &AsyncSim<'_>, basis: &Spectrum, t: f64) -> Result<Vec<f64>> {
    let x = sim.coordinates();
    Ok(vec![t, spectral::subspace_residual(&x, basis)?, gram_offdiag_max(&x), sim.events_processed() as f64])
}

/// Simulates up to `cfg.horizon`, sampling every `cfg.trace_every` time units.
/// A disconnected graph is restricted to its largest component.
pub fn run_async(graph: &SparseGraph, l: usize, cfg: &SimConfig) -> Result<AsyncRun> {
    cfg.validate()?;
    let op = psd_precondition(graph, PsdMode::Squared)?;
    let basis = op.top_eigenspace(l)?;
    let g = op.graph();
    let mut sim = AsyncSim::new(g, l, cfg.clone())?;
    let mut trace = Trace::new(ASYNC_COLUMNS);
    trace.push(sample(&sim, &basis, 0.0)?)?;
    let mut k = 1u64;
    loop {
        let t = k as f64 * cfg.trace_every;
        if t > cfg.horizon {
            break;
        }
        if let Err(e) = sim.run_until(t) {
            return Err(match e {
                Error::Divergence { t, node, .. } => Error::Divergence { t, node, trace: Some(Box::new(trace)) },
                other => other,
            });
        }
        trace.push(sample(&sim, &basis, t)?)?;
        k += 1;
    }
    sim.run_until(cfg.horizon)?;
    let x = sim.coordinates();
    Ok(AsyncRun {
        residual: spectral::subspace_residual(&x, &basis)?,
        gram_offdiag_max: gram_offdiag_max(&x),
        gram_error: gram_error(&x),
        events: sim.events_processed(),
        nodes: op.nodes().to_vec(),
        states: sim.states,
        trace,
    })
}
