//! Symmetric eigensolvers: cyclic Jacobi for dense matrices and Lanczos with
//! full reorthogonalization for large or implicit operators.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::rng::{stream, stream_rng};

/// Off-diagonal Frobenius mass, relative to ‖A‖_F, at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-11;

/// Symmetric linear map `y = A x`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nrows();
        y[..n].iter_mut().for_each(|v| *v = 0.0);
        // column-major storage: accumulate column by column
        for (j, &xj) in x.iter().enumerate().take(self.ncols()) {
            if xj == 0.0 {
                continue;
            }
            let col = self.column(j);
            for (yi, a) in y.iter_mut().zip(col.iter()) {
                *yi += a * xj;
            }
        }
    }
}

impl LinearOperator for SparseGraph {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec(x, y);
    }
}

/// Full eigendecomposition by cyclic Jacobi rotations.
///
/// Returns unsorted eigenvalues and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, a.ncols())));
    }
    // row-major working copy
    let mut m: Vec<f64> = (0..n * n).map(|k| a[(k / n, k % n)]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let fro = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |m: &[f64]| {
        let mut s = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                s += 2.0 * m[p * n + q] * m[p * n + q];
            }
        }
        s.sqrt()
    };
    let max_sweeps = (10 * n).max(50);
    let mut converged_at = None;
    let mut last_off = off(&m);
    for sweep in 0..max_sweeps {
        if last_off <= JACOBI_TOL * fro {
            converged_at = Some(sweep);
            break;
        }
        jacobi_sweep(&mut m, &mut v, n);
        last_off = off(&m);
    }
    if converged_at.is_none() && last_off > JACOBI_TOL * fro {
        return Err(Error::NoConvergence { iterations: max_sweeps, residual: last_off / fro.max(f64::MIN_POSITIVE) });
    }
    if last_off > 0.0 {
        // one polishing sweep; convergence is quadratic at this point
        jacobi_sweep(&mut m, &mut v, n);
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| v[i * n + j]);
    Ok((values, vectors))
}

fn jacobi_sweep(m: &mut [f64], v: &mut [f64], n: usize) {
    for p in 0..n {
        for q in p + 1..n {
            let apq = m[p * n + q];
            if apq == 0.0 {
                continue;
            }
            let app = m[p * n + p];
            let aqq = m[q * n + q];
            let theta = (aqq - app) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let tau = s / (1.0 + c);
            m[p * n + p] = app - t * apq;
            m[q * n + q] = aqq + t * apq;
            m[p * n + q] = 0.0;
            m[q * n + p] = 0.0;
            for r in 0..n {
                if r == p || r == q {
                    continue;
                }
                let g = m[r * n + p];
                let h = m[r * n + q];
                let gp = g - s * (h + g * tau);
                let hq = h + s * (g - h * tau);
                m[r * n + p] = gp;
                m[p * n + r] = gp;
                m[r * n + q] = hq;
                m[q * n + r] = hq;
            }
            for r in 0..n {
                let g = v[r * n + p];
                let h = v[r * n + q];
                v[r * n + p] = g - s * (h + g * tau);
                v[r * n + q] = h + s * (g - h * tau);
            }
        }
    }
}

/// Which end of the spectrum to extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    /// Largest |λ|; exact magnitude ties put the positive value first.
    Magnitude,
    /// Largest algebraic value.
    Largest,
}

/// Sorts eigenpair indices according to `order`.
pub fn ranked(values: &[f64], order: Order) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    match order {
        Order::Magnitude => idx.sort_by(|&a, &b| {
            values[b]
                .abs()
                .partial_cmp(&values[a].abs())
                .unwrap()
                .then(values[b].partial_cmp(&values[a]).unwrap())
                .then(a.cmp(&b))
        }),
        Order::Largest => idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b))),
    }
    idx
}

/// Flips `v` so that its first coordinate above `1e-10` in magnitude is positive.
pub fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-10) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Extremal eigenpairs of a symmetric operator by Lanczos with full
/// reorthogonalization. Returns `count` pairs ranked by `order`, each with
/// residual `‖A v − θ v‖ ≤ rel_tol · |θ_max|`.
pub fn lanczos(op: &impl LinearOperator, count: usize, order: Order, rel_tol: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = op.dim();
    if count == 0 || count > n {
        return Err(Error::param(format!("requested {count} eigenpairs of a {n}-dimensional operator")));
    }
    let mut rng = stream_rng(0x5eed, stream::LANCZOS_START);
    let mut random_unit = |basis: &[Vec<f64>]| -> Option<Vec<f64>> {
        for _ in 0..8 {
            let mut q: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            for _ in 0..2 {
                for b in basis {
                    let d = dot(&q, b);
                    axpy(-d, b, &mut q);
                }
            }
            let nq = norm(&q);
            if nq > 1e-8 {
                q.iter_mut().for_each(|x| *x /= nq);
                return Some(q);
            }
        }
        None
    };

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new(); // beta[j] couples basis[j] and basis[j+1]
    let mut target = n.min((2 * count + 30).max(40));
    let mut w = vec![0.0; n];
    let mut q = random_unit(&basis).ok_or(Error::ZeroNorm)?;
    let mut last_residual = f64::INFINITY;
    loop {
        while basis.len() < target {
            op.apply(&q, &mut w);
            let a = dot(&w, &q);
            alpha.push(a);
            axpy(-a, &q, &mut w);
            if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
                axpy(-b, prev, &mut w);
            }
            basis.push(q.clone());
            // full reorthogonalization, twice is enough
            for _ in 0..2 {
                for b in &basis {
                    let d = dot(&w, b);
                    axpy(-d, b, &mut w);
                }
            }
            if basis.len() == n {
                break;
            }
            let b = norm(&w);
            let scale = alpha.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
            if b <= 1e-12 * scale {
                // invariant subspace found: restart in its complement
                beta.push(0.0);
                match random_unit(&basis) {
                    Some(fresh) => q = fresh,
                    None => break,
                }
            } else {
                beta.push(b);
                q = w.iter().map(|x| x / b).collect();
            }
        }
        let m = basis.len();
        let (theta, s) = tridiagonal_eigen(&alpha[..m], &beta[..m.saturating_sub(1)])?;
        let idx = ranked(&theta, order);
        let take = count.min(m);
        let scale = theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
        let mut values = Vec::with_capacity(take);
        let mut vectors = Vec::with_capacity(take);
        let mut worst = 0.0f64;
        let mut y = vec![0.0; n];
        for &j in idx.iter().take(take) {
            let mut v = vec![0.0; n];
            for (i, b) in basis.iter().enumerate() {
                axpy(s[(i, j)], b, &mut v);
            }
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            op.apply(&v, &mut y);
            axpy(-theta[j], &v, &mut y);
            worst = worst.max(norm(&y));
            values.push(theta[j]);
            vectors.push(v);
        }
        last_residual = last_residual.min(worst);
        if take == count && worst <= rel_tol * scale.max(f64::MIN_POSITIVE) {
            return Ok((values, vectors));
        }
        if m >= n {
            if take == count && worst <= 1e-8 * scale.max(f64::MIN_POSITIVE) {
                // full Krylov space: the decomposition is exact up to rounding
                return Ok((values, vectors));
            }
            return Err(Error::NoConvergence { iterations: m, residual: worst });
        }
        target = n.min(target * 2);
    }
}

/// Eigen-decomposition of the symmetric tridiagonal matrix with diagonal `d`
/// and off-diagonal `e` (implicit QL with Wilkinson shifts).
pub fn tridiagonal_eigen(d: &[f64], e: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = d.len();
    let mut d = d.to_vec();
    let mut e: Vec<f64> = e.iter().copied().chain(std::iter::once(0.0)).take(n).collect();
    e.resize(n, 0.0);
    let mut z = DMatrix::<f64>::identity(n, n);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NoConvergence { iterations: iter, residual: e[l].abs() });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut early = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let f = z[(k, i + 1)];
                    z[(k, i + 1)] = s * z[(k, i)] + c * f;
                    z[(k, i)] = c * z[(k, i)] - s * f;
                }
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok((d, z))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
