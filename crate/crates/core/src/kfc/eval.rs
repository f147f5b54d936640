//! Factored forward and backward passes.
//!
//! Each input row is viewed as a row-major tensor with one mode per factor
//! (`c = c1*C2 + c2` for two factors) and contracted mode by mode against the
//! factors, so `x * (A ⊗ B)` becomes `vec(A^T X B)` and the dense weight is
//! never formed.

use super::spec::{Formulation, KfcSpec};
use super::weights::{KfcWeights, KronTerm};
use crate::activation::Activation;
use crate::error::{KfcError, Result};
use crate::linalg::Matrix;

/// `out[a, k, b] += input[a, c, b] * f[c, k]`, counting multiplies into `macs`.
fn contract(input: &[f64], prefix: usize, suffix: usize, f: &Matrix, out: &mut [f64], macs: &mut u64) {
    let (c_dim, k_dim) = f.shape();
    for a in 0..prefix {
        for c in 0..c_dim {
            let src = &input[(a * c_dim + c) * suffix..(a * c_dim + c + 1) * suffix];
            for (k, &coef) in f.row(c).iter().enumerate() {
                let base = (a * k_dim + k) * suffix;
                for (d, &s) in out[base..base + suffix].iter_mut().zip(src) {
                    *d += coef * s;
                }
                *macs += suffix as u64;
            }
        }
    }
}

/// `out[a, c, b] += input[a, k, b] * f[c, k]`.
fn contract_transposed(input: &[f64], prefix: usize, suffix: usize, f: &Matrix, out: &mut [f64]) {
    let (c_dim, k_dim) = f.shape();
    for a in 0..prefix {
        for c in 0..c_dim {
            let base = (a * c_dim + c) * suffix;
            for (k, &coef) in f.row(c).iter().enumerate() {
                let src = &input[(a * k_dim + k) * suffix..(a * k_dim + k + 1) * suffix];
                for (d, &s) in out[base..base + suffix].iter_mut().zip(src) {
                    *d += coef * s;
                }
            }
        }
    }
}

/// Current mode sizes, with modes in `done` already mapped to their output size.
fn mode_sizes(term: &KronTerm, contracted: impl Fn(usize) -> bool) -> Vec<usize> {
    term.factors.iter().enumerate().map(|(i, f)| if contracted(i) { f.cols() } else { f.rows() }).collect()
}

/// Contracts mode `mode` of `tensor`, whose current mode sizes are `sizes`.
fn contract_mode(tensor: &[f64], sizes: &mut [usize], mode: usize, f: &Matrix, macs: &mut u64) -> Vec<f64> {
    let prefix: usize = sizes[..mode].iter().product();
    let suffix: usize = sizes[mode + 1..].iter().product();
    let mut out = vec![0.0; prefix * f.cols() * suffix];
    contract(tensor, prefix, suffix, f, &mut out, macs);
    sizes[mode] = f.cols();
    out
}

/// `x * (F_0 ⊗ F_1 ⊗ ...)` for one input row, contracting modes in order.
fn term_forward(term: &KronTerm, x: &[f64], macs: &mut u64) -> Vec<f64> {
    let mut sizes = mode_sizes(term, |_| false);
    let mut t = x.to_vec();
    for (i, f) in term.factors.iter().enumerate() {
        t = contract_mode(&t, &mut sizes, i, f, macs);
    }
    t
}

/// Input row reordered and zero-padded into the Kronecker layout of a group.
fn group_input(spec: &KfcSpec, formulation: Formulation, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; spec.padded_input_dim()];
    for (j, &v) in x.iter().enumerate() {
        out[spec.permuted_index(formulation, j)] = v;
    }
    out
}

fn check_input(spec: &KfcSpec, x: &Matrix) -> Result<()> {
    if x.cols() != spec.input_dim() {
        return Err(KfcError::shape(format!("input has {} features, layer expects {}", x.cols(), spec.input_dim())));
    }
    Ok(())
}

/// Pre-activation output `x * W + b`, plus the number of multiplies spent in the
/// Kronecker chains (bias and activation excluded).
pub fn forward_counted(spec: &KfcSpec, w: &KfcWeights, x: &Matrix) -> Result<(Matrix, u64)> {
    check_input(spec, x)?;
    w.check(spec)?;
    let k = spec.output_dim();
    let mut out = Matrix::zeros(x.rows(), k);
    let mut macs = 0u64;
    for n in 0..x.rows() {
        let row = out.row_mut(n);
        for (terms, g) in w.groups.iter().zip(spec.groups()) {
            let xr = group_input(spec, g.formulation, x.row(n));
            for term in terms {
                let y = term_forward(term, &xr, &mut macs);
                for (o, v) in row.iter_mut().zip(&y) {
                    *o += v;
                }
            }
        }
    }
    out.add_row_vector(&w.bias)?;
    Ok((out, macs))
}

/// `h(x * W + b)` with `W` the layer's implicit Kronecker sum.
pub fn forward(spec: &KfcSpec, w: &KfcWeights, x: &Matrix, activation: Activation) -> Result<Matrix> {
    let (mut y, _) = forward_counted(spec, w, x)?;
    activation.apply_in_place(&mut y);
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct KfcGrads {
    /// Same layout as the weights; `weights.bias` holds the bias gradient.
    pub weights: KfcWeights,
    pub input: Matrix,
}

/// Gradients of `sum(forward_pre(x) .* grad_out)` with respect to every factor,
/// the bias and the input.
///
/// For a two-factor term `Y = A^T X B` with output gradient `G` (the `K1 x K2`
/// view of a `grad_out` row): `dA = X B G^T`, `dB = X^T A G`, `dX = A G B^T`.
pub fn backward(spec: &KfcSpec, w: &KfcWeights, x: &Matrix, grad_out: &Matrix) -> Result<KfcGrads> {
    check_input(spec, x)?;
    w.check(spec)?;
    if grad_out.shape() != (x.rows(), spec.output_dim()) {
        return Err(KfcError::shape(format!(
            "output gradient is {}x{}, expected {}x{}",
            grad_out.rows(),
            grad_out.cols(),
            x.rows(),
            spec.output_dim()
        )));
    }
    let mut grads = KfcWeights::zeros(spec);
    let mut gx = Matrix::zeros(x.rows(), spec.input_dim());
    let mut sink = 0u64;

    for n in 0..x.rows() {
        let g = grad_out.row(n);
        for ((terms, gterms), group) in w.groups.iter().zip(grads.groups.iter_mut()).zip(spec.groups()) {
            let xr = group_input(spec, group.formulation, x.row(n));
            let mut gxr = vec![0.0; xr.len()];
            for (term, gterm) in terms.iter().zip(gterms.iter_mut()) {
                let d = term.factors.len();
                for i in 0..d {
                    // x contracted on every mode except i
                    let mut sizes = mode_sizes(term, |_| false);
                    let mut z = xr.clone();
                    for j in (0..d).filter(|&j| j != i) {
                        z = contract_mode(&z, &mut sizes, j, &term.factors[j], &mut sink);
                    }
                    let prefix: usize = sizes[..i].iter().product();
                    let suffix: usize = sizes[i + 1..].iter().product();
                    let (c_dim, k_dim) = term.factors[i].shape();
                    let df = gterm.factors[i].data_mut();
                    for a in 0..prefix {
                        for c in 0..c_dim {
                            let zs = &z[(a * c_dim + c) * suffix..(a * c_dim + c + 1) * suffix];
                            for kk in 0..k_dim {
                                let gs = &g[(a * k_dim + kk) * suffix..(a * k_dim + kk + 1) * suffix];
                                let mut s = 0.0;
                                for (p, q) in zs.iter().zip(gs) {
                                    s += p * q;
                                }
                                df[c * k_dim + kk] += s;
                            }
                        }
                    }
                }
                // dX: contract each output mode back through F_i^T, last mode first
                let mut sizes = mode_sizes(term, |_| true);
                let mut t = g.to_vec();
                for i in (0..d).rev() {
                    let f = &term.factors[i];
                    let prefix: usize = sizes[..i].iter().product();
                    let suffix: usize = sizes[i + 1..].iter().product();
                    let mut out = vec![0.0; prefix * f.rows() * suffix];
                    contract_transposed(&t, prefix, suffix, f, &mut out);
                    sizes[i] = f.rows();
                    t = out;
                }
                for (a, b) in gxr.iter_mut().zip(&t) {
                    *a += b;
                }
            }
            let row = gx.row_mut(n);
            for (j, v) in row.iter_mut().enumerate() {
                *v += gxr[spec.permuted_index(group.formulation, j)];
            }
        }
    }
    grads.bias = grad_out.column_sums();
    Ok(KfcGrads { weights: grads, input: gx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kfc::weights::{init_weights, materialize};
    use crate::linalg::Rng;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0).unwrap())
    }

    fn dense(spec: &KfcSpec, w: &KfcWeights, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&materialize(spec, w).unwrap()).unwrap();
        y.add_row_vector(&w.bias).unwrap();
        y
    }

    fn rel_max(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().max_abs() / b.max_abs().max(1e-300)
    }

    #[test]
    fn identity_factors_pass_input_through() {
        let spec = KfcSpec::kfcm(6, 6, 2, 2, 1).unwrap();
        let mut w = KfcWeights::zeros(&spec);
        w.groups[0][0].factors = vec![Matrix::identity(2), Matrix::identity(3)];
        let x = random(&mut Rng::new(1), 4, 6);
        assert_eq!(forward(&spec, &w, &x, Activation::Identity).unwrap(), x);
    }

    #[test]
    fn kfcm_matches_dense() {
        let mut rng = Rng::new(2);
        let spec = KfcSpec::kfcm(16, 16, 4, 4, 1).unwrap();
        let mut w = init_weights(&spec, &mut rng);
        w.bias = (0..16).map(|_| rng.normal()).collect();
        let x = random(&mut rng, 3, 16);
        let y = forward(&spec, &w, &x, Activation::Identity).unwrap();
        assert!(rel_max(&y, &dense(&spec, &w, &x)) < 1e-10);
    }

    #[test]
    fn combined_ii_iii_iv_matches_dense() {
        let mut rng = Rng::new(3);
        let dims = (2, 2, 2, 8);
        let spec = KfcSpec::combine(&[
            KfcSpec::formulation(Formulation::II, dims, &[4, 2], 1).unwrap(),
            KfcSpec::formulation(Formulation::III, dims, &[2, 4], 2).unwrap(),
            KfcSpec::formulation(Formulation::IV, dims, &[4, 2], 1).unwrap(),
        ])
        .unwrap();
        let w = init_weights(&spec, &mut rng);
        let x = random(&mut rng, 5, 8);
        let y = forward(&spec, &w, &x, Activation::Identity).unwrap();
        assert!(rel_max(&y, &dense(&spec, &w, &x)) < 1e-10);
        let h = forward(&spec, &w, &x, Activation::AbsTanh).unwrap();
        assert!(rel_max(&h, &Activation::AbsTanh.apply(&dense(&spec, &w, &x))) < 1e-10);
    }

    #[test]
    fn padded_kfcm_matches_dense() {
        let mut rng = Rng::new(4);
        let spec = KfcSpec::kfcm_padded(7, 6, 2).unwrap();
        let w = init_weights(&spec, &mut rng);
        let x = random(&mut rng, 3, 7);
        let y = forward(&spec, &w, &x, Activation::Identity).unwrap();
        assert!(rel_max(&y, &dense(&spec, &w, &x)) < 1e-10);
    }

    #[test]
    fn mac_count_small_case() {
        let spec = KfcSpec::kfcm(256, 256, 16, 16, 1).unwrap();
        let w = KfcWeights::zeros(&spec);
        let (_, macs) = forward_counted(&spec, &w, &Matrix::zeros(1, 256)).unwrap();
        assert_eq!(macs, 16 * 16 * 32);
    }

    #[test]
    fn zero_output_gradient() {
        let mut rng = Rng::new(5);
        let spec = KfcSpec::kfcm(4, 4, 2, 2, 2).unwrap();
        let w = init_weights(&spec, &mut rng);
        let x = random(&mut rng, 3, 4);
        let g = backward(&spec, &w, &x, &Matrix::zeros(3, 4)).unwrap();
        assert!(g.weights.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert_eq!(g.input.max_abs(), 0.0);
    }

    #[test]
    fn two_factor_gradient_closed_forms() {
        // dA = X B G^T and dB = X^T A G for a single sample
        let mut rng = Rng::new(6);
        let spec = KfcSpec::kfcm(6, 8, 2, 4, 1).unwrap();
        let w = init_weights(&spec, &mut rng);
        let x = random(&mut rng, 1, 6);
        let go = random(&mut rng, 1, 8);
        let grads = backward(&spec, &w, &x, &go).unwrap();
        let (a, b) = (&w.groups[0][0].factors[0], &w.groups[0][0].factors[1]);
        let xm = x.reshape(2, 3).unwrap();
        let gm = go.reshape(4, 2).unwrap();
        let da = xm.matmul(b).unwrap().matmul_t(&gm).unwrap();
        let db = xm.t_matmul(a).unwrap().matmul(&gm).unwrap();
        let dx = a.matmul(&gm).unwrap().matmul_t(b).unwrap();
        assert!(rel_max(&grads.weights.groups[0][0].factors[0], &da) < 1e-12);
        assert!(rel_max(&grads.weights.groups[0][0].factors[1], &db) < 1e-12);
        assert!(rel_max(&grads.input, &dx.reshape(1, 6).unwrap()) < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let spec = KfcSpec::kfcm(4, 4, 2, 2, 1).unwrap();
        let w = KfcWeights::zeros(&spec);
        assert!(forward(&spec, &w, &Matrix::zeros(2, 5), Activation::Identity).is_err());
        assert!(backward(&spec, &w, &Matrix::zeros(2, 4), &Matrix::zeros(2, 3)).is_err());
    }
}
