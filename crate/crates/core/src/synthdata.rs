//! Planted-partition generators for similarity graphs and rating matrices,
//! plus their exact expectations.
//!
//! Randomness is counter based (see [`crate::rng`]): the Bernoulli draw for
//! an unordered user pair, or a (user, item) pair, is read from the word of
//! the seeded stream indexed by that pair. Rows are therefore generated
//! independently and in parallel, and the output does not depend on the
//! visiting order.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, SparseGraph};
use crate::rng::{counter_rng, stream, stream_rng, unit_f64};

/// Largest N for which dense expectations are materialized.
pub const DENSE_GUARD: usize = 5000;

const FRACTION_TOL: f64 = 1e-12;

/// Class-pair similarity levels of the four-class benchmark; with `p = 1/100`
/// the product `p·B` gives a graph of mean degree ≈ 40 at N = 2200.
pub const FOUR_CLASS_B: [[f64; 4]; 4] = [
    [0.5, 1.5, 2.0, 1.0],
    [1.5, 0.55, 1.0, 2.0],
    [2.0, 1.0, 0.45, 4.0],
    [1.0, 2.0, 4.0, 0.5],
];

/// Class sizes 200/500/600/900 of the four-class benchmark.
pub const FOUR_CLASS_SIZES: [usize; 4] = [200, 500, 600, 900];

/// Users split in `K` classes; users `u` in class `k` and `v` in class `l` are
/// linked independently with probability `(omega/N) b_kl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityModel {
    pub n_users: usize,
    pub alpha: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub omega: f64,
}

impl SimilarityModel {
    pub fn new(n_users: usize, alpha: Vec<f64>, b: Vec<Vec<f64>>, omega: f64) -> Result<Self> {
        let m = SimilarityModel { n_users, alpha, b, omega };
        m.validate()?;
        Ok(m)
    }

    /// The four-class benchmark scaled to `n_users`, keeping the class ratios
    /// and the probability matrix `p·B` fixed (so `omega = n_users / 100`).
    pub fn four_class_benchmark(n_users: usize) -> Self {
        Self::four_class_with_omega(n_users, n_users as f64 / 100.0)
    }

    /// Four-class benchmark with `B` fixed and a free probing intensity.
    pub fn four_class_with_omega(n_users: usize, omega: f64) -> Self {
        let total: usize = FOUR_CLASS_SIZES.iter().sum();
        SimilarityModel {
            n_users,
            alpha: FOUR_CLASS_SIZES.iter().map(|&s| s as f64 / total as f64).collect(),
            b: FOUR_CLASS_B.iter().map(|r| r.to_vec()).collect(),
            omega,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.alpha.len()
    }

    /// Probing probability `p = omega / N`.
    pub fn p(&self) -> f64 {
        self.omega / self.n_users as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::param("n_users must be positive"));
        }
        validate_fractions(&self.alpha, "alpha")?;
        let k = self.alpha.len();
        validate_matrix(&self.b, k, k, "b")?;
        for i in 0..k {
            for j in 0..i {
                if (self.b[i][j] - self.b[j][i]).abs() > FRACTION_TOL {
                    return Err(Error::param(format!("b is not symmetric at ({i}, {j})")));
                }
            }
        }
        validate_omega(self.omega, self.n_users)?;
        let pmax = self.p() * max_entry(&self.b);
        if pmax > 1.0 {
            return Err(Error::param(format!("p·b_kl = {pmax} exceeds 1")));
        }
        Ok(())
    }

    /// `M = (b_kl alpha_l)`.
    pub fn mean_matrix(&self) -> DMatrix<f64> {
        let k = self.n_classes();
        DMatrix::from_fn(k, k, |i, j| self.b[i][j] * self.alpha[j])
    }

    /// Copy of the model whose fractions equal the realized class sizes.
    pub fn with_realized_fractions(&self, assign: &ClassAssignment) -> Self {
        let mut m = self.clone();
        m.alpha = assign.fractions();
        m
    }
}

/// Users in `K` classes, items in `K'` classes; user `u` rates item `i`
/// positively with probability `(omega/N) r_{k(u) k'(i)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingModel {
    pub n_users: usize,
    pub gamma_ratio: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub omega: f64,
}

impl RatingModel {
    pub fn new(
        n_users: usize,
        gamma_ratio: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
        r: Vec<Vec<f64>>,
        omega: f64,
    ) -> Result<Self> {
        let m = RatingModel { n_users, gamma_ratio, alpha, beta, r, omega };
        m.validate()?;
        Ok(m)
    }

    /// F = round(gamma_ratio · N).
    pub fn n_items(&self) -> usize {
        (self.gamma_ratio * self.n_users as f64).round() as usize
    }

    pub fn p(&self) -> f64 {
        self.omega / self.n_users as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::param("n_users must be positive"));
        }
        if !(self.gamma_ratio > 0.0 && self.gamma_ratio <= 1.0) {
            return Err(Error::param(format!("gamma_ratio {} not in (0, 1]", self.gamma_ratio)));
        }
        if self.n_items() == 0 {
            return Err(Error::param("gamma_ratio·N rounds to zero items"));
        }
        validate_fractions(&self.alpha, "alpha")?;
        validate_fractions(&self.beta, "beta")?;
        validate_matrix(&self.r, self.alpha.len(), self.beta.len(), "r")?;
        if self.r.iter().flatten().any(|&x| x > 1.0) {
            return Err(Error::param("entries of r must lie in [0, 1]"));
        }
        validate_omega(self.omega, self.n_users)?;
        Ok(())
    }

    /// `G = R diag(beta) R' diag(alpha)`.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let k = self.alpha.len();
        DMatrix::from_fn(k, k, |i, j| {
            let h: f64 = (0..self.beta.len()).map(|l| self.r[i][l] * self.beta[l] * self.r[j][l]).sum();
            h * self.alpha[j]
        })
    }

    pub fn with_realized_fractions(&self, users: &ClassAssignment, items: &ClassAssignment) -> Self {
        let mut m = self.clone();
        m.alpha = users.fractions();
        m.beta = items.fractions();
        m
    }
}

fn validate_fractions(f: &[f64], name: &str) -> Result<()> {
    if f.is_empty() {
        return Err(Error::param(format!("{name} is empty")));
    }
    if f.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::param(format!("{name} entries must be positive")));
    }
    let s: f64 = f.iter().sum();
    if (s - 1.0).abs() > FRACTION_TOL {
        return Err(Error::param(format!("{name} sums to {s}, expected 1")));
    }
    Ok(())
}

fn validate_matrix(m: &[Vec<f64>], rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension(format!("{name} must be {rows}x{cols}")));
    }
    if m.iter().flatten().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::param(format!("{name} entries must be finite and nonnegative")));
    }
    Ok(())
}

fn validate_omega(omega: f64, n: usize) -> Result<()> {
    if !(omega > 0.0) || omega > n as f64 {
        return Err(Error::param(format!("omega {omega} must lie in (0, N={n}]")));
    }
    Ok(())
}

fn max_entry(m: &[Vec<f64>]) -> f64 {
    m.iter().flatten().copied().fold(0.0, f64::max)
}

/// Rounds `fractions · total` with the largest-remainder rule so that the
/// sizes sum to `total`. Remainder ties go to the lower class index.
pub fn class_sizes(fractions: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        sizes[k] += 1;
    }
    sizes
}

/// Class label per entity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAssignment {
    labels: Vec<usize>,
    n_classes: usize,
}

impl ClassAssignment {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::param(format!("label {bad} out of range for {n_classes} classes")));
        }
        Ok(ClassAssignment { labels, n_classes })
    }

    /// Entities `0..s_0` in class 0, the next `s_1` in class 1, and so on.
    pub fn contiguous(sizes: &[usize]) -> Self {
        let labels = sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
            .collect();
        ClassAssignment { labels, n_classes: sizes.len() }
    }

    pub fn from_fractions(fractions: &[f64], total: usize) -> Self {
        Self::contiguous(&class_sizes(fractions, total))
    }

    /// Same class sizes, positions permuted by `seed`.
    pub fn shuffled(mut self, seed: u64) -> Self {
        let mut rng = stream_rng(seed, stream::LABEL_SHUFFLE);
        self.labels.shuffle(&mut rng);
        self
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, u: usize) -> usize {
        self.labels[u]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_classes];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn fractions(&self) -> Vec<f64> {
        let n = self.labels.len() as f64;
        self.sizes().into_iter().map(|s| s as f64 / n).collect()
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&u| self.labels[u] == k).collect()
    }
}

/// Index of unordered pair `(u, v)`, `u < v`, in row-major upper-triangular order.
#[inline]
pub fn pair_index(n: usize, u: usize, v: usize) -> u128 {
    debug_assert!(u < v && v < n);
    let (n, u, v) = (n as u128, u as u128, v as u128);
    u * n - u * (u + 1) / 2 + (v - u - 1)
}

/// Samples the similarity graph for the contiguous class assignment.
pub fn gen_similarity(model: &SimilarityModel, seed: u64) -> Result<(SparseGraph, ClassAssignment)> {
    model.validate()?;
    let assign = ClassAssignment::from_fractions(&model.alpha, model.n_users);
    let g = gen_similarity_for(model, &assign, seed)?;
    Ok((g, assign))
}

/// Samples the similarity graph for a given class assignment.
pub fn gen_similarity_for(model: &SimilarityModel, assign: &ClassAssignment, seed: u64) -> Result<SparseGraph> {
    model.validate()?;
    let n = model.n_users;
    if assign.len() != n || assign.n_classes() != model.n_classes() {
        return Err(Error::Dimension("class assignment does not match the model".into()));
    }
    let p = model.p();
    let edges: Vec<Edge> = (0..n.saturating_sub(1))
        .into_par_iter()
        .flat_map_iter(|u| {
            let mut rng = counter_rng(seed, stream::SIMILARITY_EDGES, pair_index(n, u, u + 1));
            let ku = assign.label(u);
            let row = &model.b[ku];
            let mut out = Vec::new();
            for v in u + 1..n {
                if unit_f64(&mut rng) < p * row[assign.label(v)] {
                    out.push(Edge { u, v, w: 1.0 });
                }
            }
            out
        })
        .collect();
    SparseGraph::similarity(n, edges)
}

/// Samples the user × item rating matrix `S`.
pub fn gen_ratings(model: &RatingModel, seed: u64) -> Result<(SparseGraph, ClassAssignment, ClassAssignment)> {
    model.validate()?;
    let n = model.n_users;
    let f = model.n_items();
    let p = model.p();
    let pmax = p * max_entry(&model.r);
    if pmax > 1.0 {
        return Err(Error::param(format!("p·r_kk' = {pmax} exceeds 1")));
    }
    let users = ClassAssignment::from_fractions(&model.alpha, n);
    let items = ClassAssignment::from_fractions(&model.beta, f);
    let entries: Vec<Edge> = (0..n)
        .into_par_iter()
        .flat_map_iter(|u| {
            let mut rng = counter_rng(seed, stream::RATINGS, (u as u128) * (f as u128));
            let row = &model.r[users.label(u)];
            let mut out = Vec::new();
            for i in 0..f {
                if unit_f64(&mut rng) < p * row[items.label(i)] {
                    out.push(Edge { u, v: i, w: 1.0 });
                }
            }
            out
        })
        .collect();
    Ok((SparseGraph::bipartite(n, f, entries)?, users, items))
}

fn check_dense(model: &SimilarityModel, assign: &ClassAssignment) -> Result<()> {
    if model.n_users > DENSE_GUARD {
        return Err(Error::TooLarge(format!("N={} exceeds dense limit {DENSE_GUARD}", model.n_users)));
    }
    if assign.len() != model.n_users {
        return Err(Error::Dimension("class assignment does not match the model".into()));
    }
    Ok(())
}

/// `E[A]`: `(omega/N) b_{k(u)k(v)}` off the diagonal, zero on it.
pub fn expected_adjacency(model: &SimilarityModel, assign: &ClassAssignment) -> Result<DMatrix<f64>> {
    let mut a = block_expectation(model, assign)?;
    a.fill_diagonal(0.0);
    Ok(a)
}

/// Block matrix `(omega/N) b_{k(u)k(v)}` including the diagonal. Its top
/// eigenvectors are exactly class-constant with values `y_l(k)/sqrt(N)`.
pub fn block_expectation(model: &SimilarityModel, assign: &ClassAssignment) -> Result<DMatrix<f64>> {
    check_dense(model, assign)?;
    let n = model.n_users;
    let p = model.p();
    Ok(DMatrix::from_fn(n, n, |u, v| p * model.b[assign.label(u)][assign.label(v)]))
}

/// `tau(S) = [[0, S], [S', 0]]` on `N + F` nodes; item `i` becomes node `N + i`.
pub fn tau_embed(s: &SparseGraph) -> Result<SparseGraph> {
    if !s.is_bipartite() {
        return Err(Error::param("tau_embed expects a bipartite rating matrix"));
    }
    let n = s.n();
    let edges = s.edges().iter().map(|e| Edge { u: e.u, v: n + e.v, w: e.w }).collect();
    SparseGraph::similarity(n + s.n_items(), edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_class(n: usize, b: f64, omega: f64) -> SimilarityModel {
        SimilarityModel::new(n, vec![1.0], vec![vec![b]], omega).unwrap()
    }

    #[test]
    fn largest_remainder_sizes_sum_exactly() {
        assert_eq!(class_sizes(&[0.5, 0.5], 5), vec![3, 2]);
        let total: usize = FOUR_CLASS_SIZES.iter().sum();
        let fr: Vec<f64> = FOUR_CLASS_SIZES.iter().map(|&s| s as f64 / total as f64).collect();
        assert_eq!(class_sizes(&fr, 2200), vec![200, 500, 600, 900]);
        let s = class_sizes(&fr, 400);
        assert_eq!(s.iter().sum::<usize>(), 400);
        assert_eq!(s, vec![36, 91, 109, 164]);
    }

    #[test]
    fn pair_index_is_dense_and_ordered() {
        let n = 6;
        let mut expect = 0u128;
        for u in 0..n {
            for v in u + 1..n {
                assert_eq!(pair_index(n, u, v), expect);
                expect += 1;
            }
        }
    }

    #[test]
    fn zero_probability_gives_empty_graph() {
        let (g, _) = gen_similarity(&one_class(50, 0.0, 10.0), 3).unwrap();
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn rejects_probability_above_one() {
        let m = SimilarityModel { n_users: 10, alpha: vec![1.0], b: vec![vec![3.0]], omega: 5.0 };
        assert!(matches!(m.validate(), Err(Error::Parameter(_))));
        assert!(gen_similarity(&m, 1).is_err());
    }

    #[test]
    fn rejects_bad_fractions_and_asymmetric_b() {
        assert!(SimilarityModel::new(10, vec![0.5, 0.4], vec![vec![0.1, 0.1], vec![0.1, 0.1]], 1.0).is_err());
        assert!(SimilarityModel::new(10, vec![0.5, 0.5], vec![vec![0.1, 0.2], vec![0.1, 0.1]], 1.0).is_err());
        assert!(SimilarityModel::new(10, vec![1.0], vec![vec![0.1]], 11.0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let m = SimilarityModel::four_class_benchmark(300);
        let (a, _) = gen_similarity(&m, 11).unwrap();
        let (b, _) = gen_similarity(&m, 11).unwrap();
        let (c, _) = gen_similarity(&m, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn shuffled_labels_keep_sizes() {
        let a = ClassAssignment::contiguous(&[3, 5, 2]);
        let s = a.clone().shuffled(9);
        assert_eq!(s.sizes(), a.sizes());
        assert_ne!(s.labels(), a.labels());
    }

    #[test]
    fn full_rating_probability_gives_all_ones() {
        let m = RatingModel::new(6, 0.5, vec![1.0], vec![1.0], vec![vec![1.0]], 6.0).unwrap();
        let (s, users, items) = gen_ratings(&m, 4).unwrap();
        assert_eq!(s.n_edges(), 18);
        assert_eq!(users.len(), 6);
        assert_eq!(items.len(), 3);
        assert!(s.to_dense().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn single_block_expectation() {
        let m = one_class(5, 0.4, 2.0);
        let a = ClassAssignment::contiguous(&[5]);
        let e = expected_adjacency(&m, &a).unwrap();
        let c = 2.0 * 0.4 / 5.0;
        for u in 0..5 {
            for v in 0..5 {
                let want = if u == v { 0.0 } else { c };
                assert!((e[(u, v)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn expectation_rows_constant_within_class() {
        let m = SimilarityModel::four_class_benchmark(220);
        let a = ClassAssignment::from_fractions(&m.alpha, 220);
        let e = expected_adjacency(&m, &a).unwrap();
        for k in 0..4 {
            let sums: Vec<f64> = a.members(k).iter().map(|&u| e.row(u).sum()).collect();
            for s in &sums {
                assert!((s - sums[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_guard() {
        let m = one_class(DENSE_GUARD + 1, 0.1, 10.0);
        let a = ClassAssignment::contiguous(&[DENSE_GUARD + 1]);
        assert!(matches!(expected_adjacency(&m, &a), Err(Error::TooLarge(_))));
    }

    #[test]
    fn tau_layout() {
        let s = SparseGraph::bipartite(2, 2, vec![Edge { u: 0, v: 0, w: 1.0 }, Edge { u: 1, v: 1, w: 1.0 }]).unwrap();
        let t = tau_embed(&s).unwrap();
        assert_eq!(t.n(), 4);
        assert_eq!(t.weight(0, 2), Some(1.0));
        assert_eq!(t.weight(3, 1), Some(1.0));
        assert!(tau_embed(&t).is_err());
    }
}
