//! Centralized spectral oracle: top eigenpairs and singular triplets, user
//! profiles, the analytic class centroids of the block model, and the
//! diagnostics used to check how far a sampled graph is from its mean.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::linalg::{self, fix_sign, jacobi_eigen, lanczos, ranked, LinearOperator, Order};
use crate::rng::{stream, stream_rng};
use crate::synthdata::{gen_similarity, tau_embed, ClassAssignment, RatingModel, SimilarityModel};

/// Dense problems up to this size are solved by Jacobi, larger ones by Lanczos.
pub const JACOBI_MAX_DIM: usize = 512;

/// Relative gap under which two eigenvalue magnitudes count as tied.
pub const TIE_GAP: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-10;
const LANCZOS_TOL: f64 = 1e-11;

/// Top eigenpairs ordered by decreasing |value|; vectors are columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }
}

/// Scaled user profiles `sqrt(N) z_u'`, one row per user.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub profiles: DMatrix<f64>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.profiles.ncols()
    }

    pub fn n(&self) -> usize {
        self.profiles.nrows()
    }

    pub fn row(&self, u: usize) -> Vec<f64> {
        self.profiles.row(u).iter().copied().collect()
    }

    /// Scaled rows of an arbitrary N×L coordinate matrix.
    pub fn from_coordinates(x: &DMatrix<f64>) -> Self {
        let s = (x.nrows() as f64).sqrt();
        Embedding { profiles: x * s }
    }
}

/// Class centroids in profile space, one row per class.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Centroids {
    #[serde(serialize_with = "serialize_rows")]
    pub points: DMatrix<f64>,
    /// Class fractions defining the α-norm.
    pub weights: Vec<f64>,
    /// Eigenvalues of the class-level matrix (`M` or `G`) behind each column.
    pub eigenvalues: Vec<f64>,
}

fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

impl Centroids {
    pub fn n_classes(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn min_gap(&self) -> f64 {
        let k = self.n_classes();
        let mut gap = f64::INFINITY;
        for a in 0..k {
            for b in a + 1..k {
                gap = gap.min((self.points.row(a) - self.points.row(b)).norm());
            }
        }
        gap
    }

    /// Flips centroid columns whose sign disagrees with the embedding, judged
    /// by the correlation between each user's profile and its class centroid.
    pub fn aligned_to(&self, emb: &Embedding, truth: &ClassAssignment) -> Centroids {
        let mut out = self.clone();
        for l in 0..self.dim().min(emb.dim()) {
            let corr: f64 = (0..emb.n()).map(|u| emb.profiles[(u, l)] * self.points[(truth.label(u), l)]).sum();
            if corr < 0.0 {
                out.points.column_mut(l).neg_mut();
            }
        }
        out
    }

    pub fn recombined(&self, w: &DMatrix<f64>) -> Centroids {
        Centroids { points: &self.points * w, weights: self.weights.clone(), eigenvalues: self.eigenvalues.clone() }
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, a.ncols())));
    }
    let scale = a.amax().max(1.0);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

fn check_boundary(sorted_abs: &[f64], l: usize) -> Result<()> {
    if l < sorted_abs.len() {
        let top = sorted_abs[0].max(f64::MIN_POSITIVE);
        let gap = (sorted_abs[l - 1] - sorted_abs[l]).abs() / top;
        if gap <= TIE_GAP {
            return Err(Error::Degenerate { first: l - 1, second: l, gap });
        }
    }
    Ok(())
}

fn assemble(values: Vec<f64>, cols: Vec<Vec<f64>>, n: usize) -> Spectrum {
    let l = values.len();
    let mut vectors = DMatrix::zeros(n, l);
    for (j, mut v) in cols.into_iter().enumerate() {
        fix_sign(&mut v);
        vectors.column_mut(j).copy_from_slice(&v);
    }
    Spectrum { values, vectors }
}

/// Top-`l` eigenpairs of a symmetric matrix by |eigenvalue|.
///
/// Ties in magnitude inside the selection are ordered positive first; a tie
/// across the selection boundary is reported as [`Error::Degenerate`].
/// Each eigenvector has its first nonzero coordinate positive.
pub fn eig_top(matrix: &DMatrix<f64>, l: usize) -> Result<Spectrum> {
    check_symmetric(matrix)?;
    let n = matrix.nrows();
    if l == 0 || l > n {
        return Err(Error::param(format!("L={l} out of range 1..={n}")));
    }
    if n <= JACOBI_MAX_DIM {
        let (vals, vecs) = jacobi_eigen(matrix)?;
        let idx = ranked(&vals, Order::Magnitude);
        let abs: Vec<f64> = idx.iter().map(|&i| vals[i].abs()).collect();
        check_boundary(&abs, l)?;
        let values = idx[..l].iter().map(|&i| vals[i]).collect();
        let cols = idx[..l].iter().map(|&i| vecs.column(i).iter().copied().collect()).collect();
        Ok(assemble(values, cols, n))
    } else {
        eig_top_operator(matrix, l, Order::Magnitude)
    }
}

/// Top-`l` eigenpairs of an implicit symmetric operator (Lanczos).
pub fn eig_top_operator(op: &impl LinearOperator, l: usize, order: Order) -> Result<Spectrum> {
    let n = op.dim();
    if l == 0 || l > n {
        return Err(Error::param(format!("L={l} out of range 1..={n}")));
    }
    let want = (l + 1).min(n);
    let (vals, vecs) = lanczos(op, want, order, LANCZOS_TOL)?;
    let key: Vec<f64> = match order {
        Order::Magnitude => vals.iter().map(|v| v.abs()).collect(),
        Order::Largest => vals.clone(),
    };
    check_boundary(&key, l)?;
    Ok(assemble(vals[..l].to_vec(), vecs[..l].to_vec(), n))
}

/// Top-`l` singular values and left singular vectors of a rating matrix,
/// read off the positive half of the spectrum of `tau(S)`.
pub fn svd_top(s: &SparseGraph, l: usize) -> Result<Spectrum> {
    let tau = tau_embed(s)?;
    let n = s.n();
    let dim = tau.n();
    if l == 0 || 2 * l > dim {
        return Err(Error::param(format!("L={l} out of range for a {}x{} matrix", n, s.n_items())));
    }
    let full = if dim <= JACOBI_MAX_DIM { eig_top(&tau.to_dense(), 2 * l)? } else { eig_top_operator(&tau, 2 * l, Order::Magnitude)? };
    let mut values = Vec::with_capacity(l);
    let mut cols = Vec::with_capacity(l);
    for (j, &v) in full.values.iter().enumerate() {
        if v > 0.0 && values.len() < l {
            values.push(v);
            let x: Vec<f64> = full.vectors.column(j).iter().take(n).map(|x| x * std::f64::consts::SQRT_2).collect();
            cols.push(x);
        }
    }
    if values.len() < l {
        return Err(Error::param(format!("only {} positive singular values among the top {}", values.len(), 2 * l)));
    }
    Ok(assemble(values, cols, n))
}

/// Scales eigenvector rows by `sqrt(N)`.
pub fn embed(spec: &Spectrum) -> Embedding {
    Embedding::from_coordinates(&spec.vectors)
}

/// Eigen-decomposition of `H diag(alpha)` for symmetric `H`, with each
/// eigenvector normalized in the α-norm. Returns (values, K×L vectors).
fn alpha_normalized_eigen(h: &DMatrix<f64>, alpha: &[f64], l: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let k = alpha.len();
    let sq: Vec<f64> = alpha.iter().map(|a| a.sqrt()).collect();
    // diag(sqrt α) H diag(sqrt α) is symmetric and similar to H diag(α)
    let sym = DMatrix::from_fn(k, k, |i, j| sq[i] * h[(i, j)] * sq[j]);
    let (vals, vecs) = jacobi_eigen(&sym)?;
    let idx = ranked(&vals, Order::Magnitude);
    let top = vals[idx[0]].abs().max(f64::MIN_POSITIVE);
    let rank = vals.iter().filter(|v| v.abs() > 1e-12 * top).count();
    if l == 0 || l > rank {
        return Err(Error::param(format!("L={l} exceeds the rank {rank} of the class matrix")));
    }
    let abs: Vec<f64> = idx.iter().map(|&i| vals[i].abs()).collect();
    for a in 0..l {
        let upto = (l + 1).min(k);
        for b in a + 1..upto {
            let gap = (abs[a] - abs[b]).abs() / top;
            if gap <= TIE_GAP {
                return Err(Error::Degenerate { first: a, second: b, gap });
            }
        }
    }
    let mut out = DMatrix::zeros(k, l);
    for (j, &i) in idx[..l].iter().enumerate() {
        let mut y: Vec<f64> = (0..k).map(|c| vecs[(c, i)] / sq[c]).collect();
        let an: f64 = y.iter().zip(alpha).map(|(v, a)| a * v * v).sum::<f64>().sqrt();
        if an == 0.0 {
            return Err(Error::ZeroNorm);
        }
        y.iter_mut().for_each(|v| *v /= an);
        fix_sign(&mut y);
        out.column_mut(j).copy_from_slice(&y);
    }
    Ok((idx[..l].iter().map(|&i| vals[i]).collect(), out))
}

fn check_distinct(points: &DMatrix<f64>) -> Result<()> {
    for a in 0..points.nrows() {
        for b in a + 1..points.nrows() {
            if (points.row(a) - points.row(b)).norm() <= TIE_GAP {
                return Err(Error::Indistinguishable { first: a, second: b });
            }
        }
    }
    Ok(())
}

/// Class centroids `t_k` of the similarity model: rows of the top-`l`
/// eigenvectors of `M = (b_kl alpha_l)`, α-normalized.
pub fn centroids_similarity(model: &SimilarityModel, l: usize) -> Result<Centroids> {
    model.validate()?;
    let k = model.n_classes();
    let b = DMatrix::from_fn(k, k, |i, j| model.b[i][j]);
    let (vals, points) = alpha_normalized_eigen(&b, &model.alpha, l)?;
    check_distinct(&points)?;
    Ok(Centroids { points, weights: model.alpha.clone(), eigenvalues: vals })
}

/// Class centroids `chi_k` of the rating model from `G = R diag(beta) R' diag(alpha)`.
pub fn centroids_rating(model: &RatingModel, l: usize) -> Result<Centroids> {
    model.validate()?;
    let k = model.alpha.len();
    let h = DMatrix::from_fn(k, k, |i, j| (0..model.beta.len()).map(|c| model.r[i][c] * model.beta[c] * model.r[j][c]).sum());
    let (vals, points) = alpha_normalized_eigen(&h, &model.alpha, l)?;
    check_distinct(&points)?;
    Ok(Centroids { points, weights: model.alpha.clone(), eigenvalues: vals })
}

/// Fraction of the Frobenius mass of `x` outside the span of `basis`.
pub fn subspace_residual(x: &DMatrix<f64>, basis: &Spectrum) -> Result<f64> {
    if x.nrows() != basis.n() {
        return Err(Error::Dimension(format!("x has {} rows, basis has {}", x.nrows(), basis.n())));
    }
    let total = x.norm_squared();
    if total == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let p = &basis.vectors;
    let proj = p * (p.transpose() * x);
    Ok(((x - proj).norm_squared() / total).clamp(0.0, 1.0))
}

/// Sine of the angle between two vectors.
pub fn sin_angle(a: &[f64], b: &[f64]) -> f64 {
    let c = linalg::dot(a, b) / (linalg::norm(a) * linalg::norm(b));
    (1.0 - c * c).max(0.0).sqrt()
}

/// `A − E[A]` for a sampled similarity graph, applied without densifying `E[A]`.
pub struct CenteredAdjacency<'a> {
    graph: &'a SparseGraph,
    model: &'a SimilarityModel,
    assign: &'a ClassAssignment,
}

impl<'a> CenteredAdjacency<'a> {
    pub fn new(graph: &'a SparseGraph, model: &'a SimilarityModel, assign: &'a ClassAssignment) -> Result<Self> {
        if graph.n() != model.n_users || assign.len() != model.n_users {
            return Err(Error::Dimension("graph, model and assignment disagree on N".into()));
        }
        Ok(CenteredAdjacency { graph, model, assign })
    }
}

impl LinearOperator for CenteredAdjacency<'_> {
    fn dim(&self) -> usize {
        self.graph.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let k = self.model.n_classes();
        let p = self.model.p();
        let mut class_sum = vec![0.0; k];
        for (u, xu) in x.iter().enumerate() {
            class_sum[self.assign.label(u)] += xu;
        }
        let mean: Vec<f64> = (0..k).map(|c| p * (0..k).map(|l| self.model.b[c][l] * class_sum[l]).sum::<f64>()).collect();
        self.graph.mul_vec(x, y);
        for (u, yu) in y.iter_mut().enumerate() {
            let c = self.assign.label(u);
            // E[A] has a zero diagonal, so add back the u = v term of the block mean
            *yu -= mean[c] - p * self.model.b[c][c] * x[u];
        }
    }
}

/// ρ(A − E[A]) for a given sample.
pub fn centered_spectral_radius(graph: &SparseGraph, model: &SimilarityModel, assign: &ClassAssignment) -> Result<f64> {
    let op = CenteredAdjacency::new(graph, model, assign)?;
    let (vals, _) = lanczos(&op, 1, Order::Magnitude, 1e-6)?;
    Ok(vals[0].abs())
}

/// `ρ(A − E[A]) / sqrt(omega)` for a graph sampled with `seed`.
pub fn spectral_radius_ratio(model: &SimilarityModel, seed: u64) -> Result<f64> {
    let (g, assign) = gen_similarity(model, seed)?;
    if g.n_edges() == 0 && model.b.iter().flatten().all(|&b| b == 0.0) {
        return Ok(0.0);
    }
    Ok(centered_spectral_radius(&g, model, &assign)? / model.omega.sqrt())
}

/// Profiles multiplied on the right by a full-rank L×L matrix.
pub fn recombine(emb: &Embedding, w: &DMatrix<f64>) -> Result<Embedding> {
    let l = emb.dim();
    if w.shape() != (l, l) {
        return Err(Error::Dimension(format!("recombination must be {l}x{l}")));
    }
    let sv = w.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if sv.min() <= 1e-12 * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::param("recombination matrix is rank deficient"));
    }
    Ok(Embedding { profiles: &emb.profiles * w })
}

/// Random full-rank L×L matrix `Q1 diag(s) Q2` with singular values drawn
/// uniformly in `[s_min, s_max]`.
pub fn random_recombination(l: usize, s_min: f64, s_max: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, stream::RECOMBINE);
    let mut gauss = || DMatrix::<f64>::from_fn(l, l, |_, _| StandardNormal.sample(&mut rng));
    let q1 = gauss().qr().q();
    let q2 = gauss().qr().q();
    let mut rng = stream_rng(seed ^ 0x9e37_79b9, stream::RECOMBINE);
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(l, |_, _| {
        s_min + (s_max - s_min) * crate::rng::unit_f64(&mut rng)
    }));
    q1 * s * q2
}

/// Index of the closest centroid for each user; ties go to the lowest class.
pub fn nearest_centroid(emb: &Embedding, cents: &Centroids) -> Vec<usize> {
    (0..emb.n())
        .map(|u| {
            let row = emb.profiles.row(u);
            let mut best = (0, f64::INFINITY);
            for k in 0..cents.n_classes() {
                let d = (row - cents.points.row(k)).norm_squared();
                if d < best.1 {
                    best = (k, d);
                }
            }
            best.0
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClusterScore {
    /// Fraction of users within distance `a` of their class centroid.
    pub fraction_within: f64,
    /// Nearest-centroid classification accuracy.
    pub accuracy: f64,
}

/// Class recovery of an embedding against the true labels. Centroid column
/// signs are first aligned to the embedding (see [`Centroids::aligned_to`]).
pub fn cluster_accuracy(emb: &Embedding, cents: &Centroids, truth: &ClassAssignment, a: f64) -> Result<ClusterScore> {
    if emb.n() != truth.len() {
        return Err(Error::Dimension("embedding and labels disagree on N".into()));
    }
    if emb.dim() != cents.dim() || cents.n_classes() != truth.n_classes() {
        return Err(Error::Dimension("centroids do not match the embedding".into()));
    }
    let cents = cents.aligned_to(emb, truth);
    let n = emb.n() as f64;
    let within = (0..emb.n())
        .filter(|&u| (emb.profiles.row(u) - cents.points.row(truth.label(u))).norm() <= a)
        .count();
    let pred = nearest_centroid(emb, &cents);
    let correct = pred.iter().zip(truth.labels()).filter(|(p, t)| p == t).count();
    Ok(ClusterScore { fraction_within: within as f64 / n, accuracy: correct as f64 / n })
}
