//! Dense singular value decompositions.
//!
//! [`svd_full`] is a one-sided (Hestenes) Jacobi method. [`svd_truncated`]
//! finds the leading right singular vectors one at a time by power iteration
//! on `M^T M`, deflating previously found directions, and finishes with a
//! Rayleigh-Ritz step (a Jacobi SVD of `M V`) inside the found subspace.
//!
//! Both enforce the same sign convention: the largest-magnitude entry of every
//! left singular vector is positive (first such entry on ties).

use super::matrix::{dot, Matrix};
use super::rng::Rng;
use crate::error::{KfcError, Result};

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = 1e-15;
pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITERS: usize = 10_000;
const POWER_START_SEED: u64 = 0x5EED_F57D;

/// `m ≈ u * diag(s) * v^T` with orthonormal columns in `u` (m x k) and `v` (n x k).
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u * diag(s) * v^T`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, &s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *x *= s;
            }
        }
        us.matmul_t(&self.v).expect("svd factors are conformable")
    }
}

type Columns = Vec<Vec<f64>>;

fn to_columns(m: &Matrix) -> Columns {
    (0..m.cols()).map(|j| m.column(j)).collect()
}

fn from_columns(cols: &[Vec<f64>], rows: usize) -> Matrix {
    Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// Removes the components of `x` along each (unit) vector of `basis`.
fn project_out(x: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(x, b);
        axpy(x, -c, b);
    }
}

/// Re-orthonormalizes `cols` in place (two Gram-Schmidt passes). Columns that
/// lose most of their norm are replaced by the unit vector, orthogonal to all
/// others, that completes the basis.
fn orthonormalize(cols: &mut Columns) {
    let dim = cols.first().map(Vec::len).unwrap_or(0);
    for j in 0..cols.len() {
        let (done, rest) = cols.split_at_mut(j);
        let x = &mut rest[0];
        let before = norm(x);
        project_out(x, done);
        project_out(x, done);
        let after = norm(x);
        if before > 0.0 && after > 0.5 * before {
            x.iter_mut().for_each(|v| *v /= after);
            continue;
        }
        // complete with the canonical axis that survives projection best
        let mut best: Option<(f64, Vec<f64>)> = None;
        for axis in 0..dim {
            let mut e = vec![0.0; dim];
            e[axis] = 1.0;
            project_out(&mut e, done);
            project_out(&mut e, done);
            let n = norm(&e);
            if best.as_ref().is_none_or(|(bn, _)| n > *bn + 1e-12) {
                best = Some((n, e));
            }
        }
        let (n, e) = best.expect("dimension is positive");
        *x = e.into_iter().map(|v| v / n).collect();
    }
}

fn apply_sign_convention(u: &mut Columns, v: &mut Columns) {
    for (uc, vc) in u.iter_mut().zip(v.iter_mut()) {
        let mut pivot = 0;
        for (i, x) in uc.iter().enumerate() {
            if x.abs() > uc[pivot].abs() {
                pivot = i;
            }
        }
        if uc[pivot] < 0.0 {
            uc.iter_mut().for_each(|x| *x = -*x);
            vc.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// One-sided Jacobi on the columns of a tall (rows >= cols) matrix.
fn jacobi_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, n) = m.shape();
    let mut a = to_columns(m);
    let mut v: Columns = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(KfcError::Numeric { what: "one-sided Jacobi SVD", iterations: sweeps });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sigma: Vec<f64> = a.iter().map(|c| norm(c)).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let s: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    let mut u: Columns = order
        .iter()
        .map(|&j| {
            let sj = sigma[j];
            if sj > 0.0 {
                a[j].iter().map(|x| x / sj).collect()
            } else {
                vec![0.0; rows]
            }
        })
        .collect();
    let mut vs: Columns = order.iter().map(|&j| v[j].clone()).collect();
    orthonormalize(&mut u);
    apply_sign_convention(&mut u, &mut vs);
    Ok(SvdResult { u: from_columns(&u, rows), s, v: from_columns(&vs, n) })
}

fn rotate(cols: &mut Columns, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn transpose_result(r: SvdResult) -> SvdResult {
    let mut u = to_columns(&r.v);
    let mut v = to_columns(&r.u);
    apply_sign_convention(&mut u, &mut v);
    SvdResult { u: from_columns(&u, r.v.rows()), s: r.s, v: from_columns(&v, r.u.rows()) }
}

/// Thin SVD with `k = min(rows, cols)` triples.
pub fn svd_full(m: &Matrix) -> Result<SvdResult> {
    if m.rows() >= m.cols() {
        jacobi_tall(m)
    } else {
        jacobi_tall(&m.transpose()).map(transpose_result)
    }
}

/// Leading `k` singular triples by deflated power iteration.
pub fn svd_truncated(m: &Matrix, k: usize) -> Result<SvdResult> {
    let kmax = m.rows().min(m.cols());
    if k == 0 || k > kmax {
        return Err(KfcError::arg(format!(
            "truncation rank {k} outside 1..={kmax} for {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if m.rows() >= m.cols() {
        truncated_tall(m, k)
    } else {
        truncated_tall(&m.transpose(), k).map(transpose_result)
    }
}

fn truncated_tall(m: &Matrix, k: usize) -> Result<SvdResult> {
    let n = m.cols();
    let mut rng = Rng::new(POWER_START_SEED);
    let mut basis: Columns = Vec::with_capacity(k);
    let mut top_eig: Option<f64> = None;

    let gram_apply = |x: &[f64]| -> Vec<f64> {
        let mx: Vec<f64> = (0..m.rows()).map(|i| dot(m.row(i), x)).collect();
        let mut out = vec![0.0; n];
        for (i, &c) in mx.iter().enumerate() {
            axpy(&mut out, c, m.row(i));
        }
        out
    };

    for _ in 0..k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        project_out(&mut v, &basis);
        project_out(&mut v, &basis);
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);

        for _ in 0..POWER_MAX_ITERS {
            let mut w = gram_apply(&v);
            project_out(&mut w, &basis);
            let lambda = dot(&v, &w);
            let scale = top_eig.unwrap_or(lambda).max(lambda);
            let mut resid = w.clone();
            axpy(&mut resid, -lambda, &v);
            let nw = norm(&w);
            if norm(&resid) <= POWER_TOL * scale || nw <= f64::MIN_POSITIVE {
                break;
            }
            v = w.into_iter().map(|x| x / nw).collect();
            // keep the iterate inside the deflated subspace despite rounding
            project_out(&mut v, &basis);
            let nv = norm(&v);
            v.iter_mut().for_each(|x| *x /= nv);
        }
        if top_eig.is_none() {
            top_eig = Some(dot(&v, &gram_apply(&v)));
        }
        basis.push(v);
    }
    orthonormalize(&mut basis);

    // Rayleigh-Ritz: SVD of M V inside the found subspace.
    let v_mat = from_columns(&basis, n);
    let inner = jacobi_tall(&m.matmul(&v_mat)?)?;
    let v = v_mat.matmul(&inner.v)?;
    Ok(SvdResult { u: inner.u, s: inner.s, v })
}
