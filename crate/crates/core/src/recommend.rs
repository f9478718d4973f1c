//! Local voting in profile space, its consistency with the true item
//! ranking, and the hidden-rating agreement experiment.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Edge, SparseGraph};
use crate::rng::{stream, stream_rng};
use crate::spectral::{self, Centroids, Embedding};
use crate::synthdata::{ClassAssignment, RatingModel};

/// Fraction of the largest admissible radius (a sixth of the smallest
/// centroid gap) used for the class balls.
pub const RHO_MARGIN: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VicinityQuery {
    pub user: usize,
    pub radius: f64,
}

impl VicinityQuery {
    pub fn new(user: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::param(format!("vicinity radius must be positive, got {radius}")));
        }
        Ok(VicinityQuery { user, radius })
    }
}

/// Users whose scaled profile lies within `d` of user `u`'s, `u` included.
pub fn vicinity(emb: &Embedding, u: usize, d: f64) -> Result<Vec<usize>> {
    let q = VicinityQuery::new(u, d)?;
    if q.user >= emb.n() {
        return Err(Error::param(format!("user {u} out of range")));
    }
    let me = emb.profiles.row(q.user);
    Ok((0..emb.n()).filter(|&v| (emb.profiles.row(v) - me).norm() <= q.radius).collect())
}

/// Votes `V_u(f)` collected from a vicinity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VoteTally {
    pub counts: BTreeMap<usize, u64>,
    pub vicinity_size: usize,
}

impl VoteTally {
    pub fn count(&self, item: usize) -> u64 {
        self.counts.get(&item).copied().unwrap_or(0)
    }
}

/// Counts, for each requested item, the vicinity members who rated it.
pub fn votes(ratings: &SparseGraph, vicinity: &[usize], items: &[usize]) -> Result<VoteTally> {
    if !ratings.is_bipartite() {
        return Err(Error::param("votes need a rating matrix"));
    }
    let mut counts: BTreeMap<usize, u64> = items.iter().map(|&f| (f, 0)).collect();
    if let Some(&f) = items.iter().find(|&&f| f >= ratings.n_items()) {
        return Err(Error::param(format!("item {f} out of range")));
    }
    for &v in vicinity {
        for &(f, _) in ratings.neighbors(v) {
            if let Some(c) = counts.get_mut(&f) {
                *c += 1;
            }
        }
    }
    Ok(VoteTally { counts, vicinity_size: vicinity.len() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Consistency {
    pub consistent: bool,
    /// Pairs `(f, f')` with `r(f) > r(f')` but `V(f) ≤ V(f')`.
    pub violations: Vec<(usize, usize)>,
}

/// Whether the votes order the sampled items like the user's class
/// affinities `r_row`. Items of equal affinity are not compared.
pub fn rank_consistency(tally: &VoteTally, r_row: &[f64], item_classes: &ClassAssignment, sample: &[usize]) -> Consistency {
    let mut violations = Vec::new();
    for &f in sample {
        for &g in sample {
            let (rf, rg) = (r_row[item_classes.label(f)], r_row[item_classes.label(g)]);
            if rf > rg && tally.count(f) <= tally.count(g) {
                violations.push((f, g));
            }
        }
    }
    Consistency { consistent: violations.is_empty(), violations }
}

/// `ε_k`: a third of the smallest nonzero gap in row `k` of `r`.
pub fn separation(r_row: &[f64]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (i, a) in r_row.iter().enumerate() {
        for b in &r_row[i + 1..] {
            let gap = (a - b).abs();
            if gap > 0.0 {
                best = Some(best.map_or(gap, |g: f64| g.min(gap)));
            }
        }
    }
    best.map(|g| g / 3.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UserVoting {
    pub user: usize,
    /// Profile within `rho0` of its class centroid.
    pub eligible: bool,
    pub consistent_samples: usize,
    pub samples: usize,
    /// Items whose vote count leaves the band `α_k ω (r ± ε_k)`.
    pub misclassified: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VotingReport {
    pub rho0: f64,
    pub radius: f64,
    pub eligible_users: usize,
    pub excluded_fraction: f64,
    /// Rank-consistent fraction of (eligible user, sample) pairs.
    pub consistency_fraction: f64,
    pub mean_misclassified: f64,
    pub users: Vec<UserVoting>,
}

/// Ground truth behind a rating matrix.
#[derive(Clone, Copy, Debug)]
pub struct RatingTruth<'a> {
    pub model: &'a RatingModel,
    pub users: &'a ClassAssignment,
    pub items: &'a ClassAssignment,
}

/// Voting parameters; `radius` defaults to `2 rho0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VotingParams {
    pub radius: Option<f64>,
    pub sample_size: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// Checks the voting rule for users whose profile lies within
/// `rho0 = 0.9 · min gap / 6` of their class centroid; other users are
/// excluded and counted in `excluded_fraction`.
pub fn evaluate_voting(ratings: &SparseGraph, emb: &Embedding, cents: &Centroids, truth: RatingTruth<'_>, params: VotingParams) -> Result<VotingReport> {
    let n = ratings.n();
    let n_items = ratings.n_items();
    if emb.n() != n || truth.users.len() != n || truth.items.len() != n_items {
        return Err(Error::Dimension("ratings, embedding and labels disagree".into()));
    }
    if params.sample_size == 0 || params.sample_size > n_items {
        return Err(Error::param(format!("sample size {} out of range 1..={n_items}", params.sample_size)));
    }
    let gap = cents.min_gap();
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(Error::param("class centroids coincide; no admissible radius"));
    }
    let rho0 = RHO_MARGIN * gap / 6.0;
    let radius = params.radius.unwrap_or(2.0 * rho0);
    let cents = cents.aligned_to(emb, truth.users);
    let all_items: Vec<usize> = (0..n_items).collect();
    let mut rng = stream_rng(params.seed, stream::VOTING_SAMPLES);

    let mut users = Vec::with_capacity(n);
    let (mut consistent_total, mut sample_total, mut misclassified_total) = (0usize, 0usize, 0usize);
    for u in 0..n {
        let k = truth.users.label(u);
        let eligible = (emb.profiles.row(u) - cents.points.row(k)).norm() <= rho0;
        let mut rec = UserVoting { user: u, eligible, consistent_samples: 0, samples: 0, misclassified: 0 };
        if eligible {
            let near = vicinity(emb, u, radius)?;
            let tally = votes(ratings, &near, &all_items)?;
            let r_row = &truth.model.r[k];
            for _ in 0..params.n_samples {
                let sample = index::sample(&mut rng, n_items, params.sample_size).into_vec();
                rec.samples += 1;
                if rank_consistency(&tally, r_row, truth.items, &sample).consistent {
                    rec.consistent_samples += 1;
                }
            }
            if let Some(eps) = separation(r_row) {
                let scale = truth.model.alpha[k] * truth.model.omega;
                rec.misclassified = all_items
                    .iter()
                    .filter(|&&f| {
                        let r = r_row[truth.items.label(f)];
                        let v = tally.count(f) as f64;
                        v < scale * (r - eps) || v > scale * (r + eps)
                    })
                    .count();
            }
            consistent_total += rec.consistent_samples;
            sample_total += rec.samples;
            misclassified_total += rec.misclassified;
        }
        users.push(rec);
    }
    let eligible_users = users.iter().filter(|u| u.eligible).count();
    Ok(VotingReport {
        rho0,
        radius,
        eligible_users,
        excluded_fraction: 1.0 - eligible_users as f64 / n as f64,
        consistency_fraction: if sample_total == 0 { 0.0 } else { consistent_total as f64 / sample_total as f64 },
        mean_misclassified: if eligible_users == 0 { 0.0 } else { misclassified_total as f64 / eligible_users as f64 },
        users,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgreementCurve {
    /// `frequency[k-1]`: how often the rank-`k` neighbour rated the hidden item.
    pub frequency: Vec<f64>,
    pub users_evaluated: usize,
    /// Users with fewer than two ratings.
    pub users_skipped: usize,
    /// Mean over items of the fraction of users who rated it.
    pub mean_popularity: f64,
}

impl AgreementCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,frequency\n");
        for (k, f) in self.frequency.iter().enumerate() {
            s.push_str(&format!("{},{}\n", k + 1, crate::trace::format_value(*f)));
        }
        s
    }
}

/// Hides one rating per user, embeds the remaining matrix, and measures how
/// often the `k`-th closest user (ties by index) rated the hidden item.
pub fn agreement_experiment(ratings: &SparseGraph, l: usize, max_rank: usize, seed: u64) -> Result<AgreementCurve> {
    if !ratings.is_bipartite() {
        return Err(Error::param("agreement experiment needs a rating matrix"));
    }
    let n = ratings.n();
    if max_rank == 0 || max_rank >= n {
        return Err(Error::param(format!("rank {max_rank} out of range 1..={}", n.saturating_sub(1))));
    }
    let mut rng = stream_rng(seed, stream::AGREEMENT_HIDE);
    let mut hidden: Vec<Option<usize>> = vec![None; n];
    for (u, h) in hidden.iter_mut().enumerate() {
        let row = ratings.neighbors(u);
        if row.len() >= 2 {
            *h = Some(row[rng.random_range(0..row.len())].0);
        }
    }
    let kept: Vec<Edge> = ratings.edges().iter().filter(|e| hidden[e.u] != Some(e.v)).copied().collect();
    let observed = SparseGraph::bipartite(n, ratings.n_items(), kept)?;
    let emb = spectral::embed(&spectral::svd_top(&observed, l)?);

    let mut hits = vec![0usize; max_rank];
    let mut evaluated = 0;
    for u in 0..n {
        let Some(f) = hidden[u] else { continue };
        evaluated += 1;
        let me = emb.profiles.row(u);
        let mut order: Vec<(f64, usize)> = (0..n).filter(|&v| v != u).map(|v| ((emb.profiles.row(v) - me).norm_squared(), v)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (k, &(_, v)) in order.iter().take(max_rank).enumerate() {
            if ratings.weight(v, f).is_some() {
                hits[k] += 1;
            }
        }
    }
    let denom = evaluated.max(1) as f64;
    let n_items = ratings.n_items();
    let mean_popularity = if n_items == 0 { 0.0 } else { ratings.n_edges() as f64 / (n as f64 * n_items as f64) };
    Ok(AgreementCurve {
        frequency: hits.iter().map(|&h| h as f64 / denom).collect(),
        users_evaluated: evaluated,
        users_skipped: n - evaluated,
        mean_popularity,
    })
}
