//! Nearest-Kronecker-product compression of dense weights.
//!
//! `‖M - Σ A_i ⊗ B_i‖_F` equals `‖R(M) - Σ vec(A_i) vec(B_i)^T‖_F` for the
//! block rearrangement `R`, so the best rank-k Kronecker sum of a fixed shape
//! comes from the top-k singular triples of `R(M)`. Each triple is split
//! symmetrically: `A_i = unvec(√σ_i u_i)`, `B_i = unvec(√σ_i v_i)`.

use crate::error::{KfcError, Result};
use crate::kfc::{FactorShape, KfcSpec, KfcWeights, KronTerm};
use crate::linalg::{rearrange, svd_truncated, unvec, Matrix, Rng};

#[derive(Debug, Clone)]
pub struct DecompResult {
    pub terms: Vec<KronTerm>,
    /// Leading singular values of the rearranged matrix, non-increasing.
    pub singular_values: Vec<f64>,
    pub residual_fro: f64,
    /// `residual_fro / ‖M‖_F`, defined as 0 for `M = 0`.
    pub rel_residual: f64,
}

impl DecompResult {
    pub fn reconstruct(&self) -> Result<Matrix> {
        let mut acc: Option<Matrix> = None;
        for t in &self.terms {
            let m = t.materialize()?;
            acc = Some(match acc {
                Some(a) => a.add(&m)?,
                None => m,
            });
        }
        acc.ok_or_else(|| KfcError::arg("empty decomposition"))
    }
}

fn two_factor(
    m: &Matrix,
    (m1, n1): (usize, usize),
    (m2, n2): (usize, usize),
    k: usize,
) -> Result<(Vec<KronTerm>, Vec<f64>)> {
    let r = rearrange(m, m1, n1, m2, n2)?;
    let kmax = r.rows().min(r.cols());
    if k == 0 || k > kmax {
        return Err(KfcError::arg(format!("rank {k} outside 1..={kmax} for factor shapes {m1}x{n1}, {m2}x{n2}")));
    }
    if m.max_abs() == 0.0 {
        let terms = (0..k).map(|_| KronTerm { factors: vec![Matrix::zeros(m1, n1), Matrix::zeros(m2, n2)] }).collect();
        return Ok((terms, vec![0.0; k]));
    }
    let svd = svd_truncated(&r, k)?;
    let mut terms = Vec::with_capacity(k);
    for i in 0..k {
        let root = svd.s[i].sqrt();
        let a: Vec<f64> = svd.u.column(i).iter().map(|x| x * root).collect();
        let b: Vec<f64> = svd.v.column(i).iter().map(|x| x * root).collect();
        terms.push(KronTerm { factors: vec![unvec(&a, m1, n1)?, unvec(&b, m2, n2)?] });
    }
    Ok((terms, svd.s))
}

/// Largest rank [`nkp`] accepts for `shape`: the smaller side of the
/// (first-stage) rearranged matrix.
pub fn max_rank(shape: &FactorShape) -> usize {
    let f = shape.factors();
    let outer = f[0].0 * f[0].1;
    let inner: usize = f[1..].iter().map(|(r, c)| r * c).product();
    outer.min(inner)
}

/// Best rank-`k` Kronecker-sum approximation of `m` with factor shapes `shape`.
///
/// Three-factor shapes are fitted in two stages (outer factor against the
/// product of the inner two, then a rank-1 split of each inner block); only the
/// first stage is Frobenius-optimal.
pub fn nkp(m: &Matrix, shape: &FactorShape, k: usize) -> Result<DecompResult> {
    if shape.in_dim() != m.rows() || shape.out_dim() != m.cols() {
        return Err(KfcError::shape(format!(
            "factor shapes {shape} give a {}x{} product, matrix is {}x{}",
            shape.in_dim(),
            shape.out_dim(),
            m.rows(),
            m.cols()
        )));
    }
    let f = shape.factors();
    let (terms, singular_values) = match f.len() {
        2 => two_factor(m, f[0], f[1], k)?,
        3 => {
            let inner = (f[1].0 * f[2].0, f[1].1 * f[2].1);
            let (outer, s) = two_factor(m, f[0], inner, k)?;
            let mut terms = Vec::with_capacity(k);
            for t in outer {
                let (mut split, _) = two_factor(&t.factors[1], f[1], f[2], 1)?;
                let mut factors = vec![t.factors[0].clone()];
                factors.append(&mut split[0].factors);
                terms.push(KronTerm { factors });
            }
            (terms, s)
        }
        n => return Err(KfcError::arg(format!("{n}-factor shapes are not supported"))),
    };
    let mut result = DecompResult { terms, singular_values, residual_fro: 0.0, rel_residual: 0.0 };
    let norm = m.frobenius_norm();
    result.residual_fro = m.sub(&result.reconstruct()?)?.frobenius_norm();
    result.rel_residual = if norm == 0.0 { 0.0 } else { result.residual_fro / norm };
    Ok(result)
}

/// Rows of a dense `input_dim x K` weight placed in the Kronecker layout of `spec`'s
/// single group (Formulation IV reordering, zero rows for input padding).
fn kronecker_layout(m: &Matrix, spec: &KfcSpec) -> Matrix {
    let g = &spec.groups()[0];
    let mut out = Matrix::zeros(spec.padded_input_dim(), spec.output_dim());
    for j in 0..spec.input_dim() {
        let dst = spec.permuted_index(g.formulation, j);
        out.row_mut(dst).copy_from_slice(m.row(j));
    }
    out
}

fn check_dense(m: &Matrix, bias: &[f64], spec: &KfcSpec) -> Result<()> {
    if m.shape() != (spec.input_dim(), spec.output_dim()) {
        return Err(KfcError::shape(format!(
            "dense weight is {}x{}, layer is {}x{}",
            m.rows(),
            m.cols(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    if bias.len() != spec.output_dim() {
        return Err(KfcError::shape(format!("bias length {} for output {}", bias.len(), spec.output_dim())));
    }
    Ok(())
}

/// KFC weights for a single-group `spec` initialized from a trained dense layer.
pub fn compress_fc(m: &Matrix, bias: &[f64], spec: &KfcSpec) -> Result<KfcWeights> {
    if spec.groups().len() != 1 {
        return Err(KfcError::Unsupported(format!(
            "NKP has no closed form for {} shape groups; use compress_fc_multi, which fits group 1 \
             by NKP and starts the others near zero",
            spec.groups().len()
        )));
    }
    check_dense(m, bias, spec)?;
    let g = &spec.groups()[0];
    let d = nkp(&kronecker_layout(m, spec), &g.shape, g.rank)?;
    let w = KfcWeights { groups: vec![d.terms], bias: bias.to_vec() };
    w.check(spec)?;
    Ok(w)
}

/// Multi-group fallback: group 1 from NKP, remaining groups uniform in `±1e-4`.
pub fn compress_fc_multi(m: &Matrix, bias: &[f64], spec: &KfcSpec, rng: &mut Rng) -> Result<KfcWeights> {
    check_dense(m, bias, spec)?;
    let first = KfcSpec::new(spec.input(), spec.output_dim(), spec.input_pad(), vec![spec.groups()[0].clone()])?;
    let head = compress_fc(m, bias, &first)?;
    let mut w = KfcWeights::zeros(spec);
    w.groups[0] = head.groups.into_iter().next().expect("one group");
    for terms in w.groups.iter_mut().skip(1) {
        for f in terms.iter_mut().flat_map(|t| t.factors.iter_mut()) {
            for v in f.data_mut() {
                *v = rng.uniform(-1e-4, 1e-4)?;
            }
        }
    }
    w.bias = bias.to_vec();
    Ok(w)
}

/// Factors `m ≈ left * right` with `left = U_r D_r^{1/2}` (input x r) and
/// `right = D_r^{1/2} V_r^T` (r x output): the two consecutive layers of a
/// rank-`r` replacement.
pub fn lowrank_init(m: &Matrix, r: usize) -> Result<(Matrix, Matrix)> {
    let svd = svd_truncated(m, r)?;
    let roots: Vec<f64> = svd.s.iter().map(|s| s.sqrt()).collect();
    let left = Matrix::from_fn(m.rows(), r, |i, j| svd.u.get(i, j) * roots[j]);
    let right = Matrix::from_fn(r, m.cols(), |i, j| svd.v.get(j, i) * roots[i]);
    Ok((left, right))
}
