//! Kronecker product, row-major `vec`, and the block rearrangement that maps
//! nearest-Kronecker fitting onto a rank-1 approximation.

use super::matrix::{checked_len, Matrix};
use crate::error::{KfcError, Result};

/// `a ⊗ b`: entry `(i*p + r, j*q + s)` is `a[i][j] * b[r][s]` for `b` of shape `p x q`.
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let rows = a.rows().checked_mul(b.rows()).ok_or_else(|| KfcError::Capacity("kron row count overflows".into()))?;
    let cols =
        a.cols().checked_mul(b.cols()).ok_or_else(|| KfcError::Capacity("kron column count overflows".into()))?;
    let mut out = vec![0.0; checked_len(rows, cols)?];
    let (p, q) = b.shape();
    for i in 0..a.rows() {
        for r in 0..p {
            let dst = &mut out[(i * p + r) * cols..(i * p + r + 1) * cols];
            let b_row = b.row(r);
            for j in 0..a.cols() {
                let aij = a.get(i, j);
                for (d, &bv) in dst[j * q..(j + 1) * q].iter_mut().zip(b_row) {
                    *d = aij * bv;
                }
            }
        }
    }
    Ok(Matrix::from_raw(rows, cols, out))
}

/// Row-major flattening into a column: entry `i*cols + j` is `m[i][j]`.
pub fn vec(m: &Matrix) -> Matrix {
    Matrix::column_vector(m.data())
}

/// Inverse of [`vec`] for a target shape.
pub fn unvec(values: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    Matrix::new(rows, cols, values.to_vec())
}

/// Van Loan-Pitsianis rearrangement for block size `m2 x n2`.
///
/// Row `i*n1 + j` of the result is the row-major `vec` of block `(i, j)`, so
/// `result[i*n1 + j][p*n2 + q] = m[i*m2 + p][j*n2 + q]`. With this layout
/// `rearrange(kron(A, B)) == vec(A) * vec(B)^T` and the map is an isometry in
/// the Frobenius norm.
pub fn rearrange(m: &Matrix, m1: usize, n1: usize, m2: usize, n2: usize) -> Result<Matrix> {
    if m1 == 0 || n1 == 0 || m2 == 0 || n2 == 0 {
        return Err(KfcError::shape("rearrange block dimensions must be positive"));
    }
    if m1.checked_mul(m2) != Some(m.rows()) || n1.checked_mul(n2) != Some(m.cols()) {
        return Err(KfcError::shape(format!(
            "cannot split {}x{} into {m1}x{n1} blocks of {m2}x{n2}",
            m.rows(),
            m.cols()
        )));
    }
    let (rr, rc) = (m1 * n1, m2 * n2);
    let mut out = vec![0.0; checked_len(rr, rc)?];
    for i in 0..m1 {
        for j in 0..n1 {
            let dst = &mut out[(i * n1 + j) * rc..(i * n1 + j + 1) * rc];
            for p in 0..m2 {
                let src = &m.row(i * m2 + p)[j * n2..(j + 1) * n2];
                dst[p * n2..(p + 1) * n2].copy_from_slice(src);
            }
        }
    }
    Ok(Matrix::from_raw(rr, rc, out))
}

/// Inverse of [`rearrange`].
pub fn unrearrange(r: &Matrix, m1: usize, n1: usize, m2: usize, n2: usize) -> Result<Matrix> {
    if r.rows() != m1 * n1 || r.cols() != m2 * n2 {
        return Err(KfcError::shape(format!(
            "{}x{} is not a rearrangement for blocks {m1}x{n1} of {m2}x{n2}",
            r.rows(),
            r.cols()
        )));
    }
    let (rows, cols) = (m1 * m2, n1 * n2);
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..m1 {
        for j in 0..n1 {
            let src = r.row(i * n1 + j);
            for p in 0..m2 {
                out.row_mut(i * m2 + p)[j * n2..(j + 1) * n2].copy_from_slice(&src[p * n2..(p + 1) * n2]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use proptest::prelude::*;

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0).unwrap())
    }

    /// Element-formula oracle, independent of the block-copy loops above.
    fn kron_oracle(a: &Matrix, b: &Matrix) -> Matrix {
        let (p, q) = b.shape();
        Matrix::from_fn(a.rows() * p, a.cols() * q, |r, c| a.get(r / p, c / q) * b.get(r % p, c % q))
    }

    fn outer(u: &Matrix, v: &Matrix) -> Matrix {
        Matrix::from_fn(u.len(), v.len(), |i, j| u.data()[i] * v.data()[j])
    }

    #[test]
    fn identities() {
        assert_eq!(kron(&Matrix::identity(2), &Matrix::identity(2)).unwrap(), Matrix::identity(4));
        let a = Matrix::from_rows(&[[1.0, -2.0, 3.5]]);
        assert_eq!(kron(&a, &Matrix::from_rows(&[[1.0]])).unwrap(), a);
    }

    #[test]
    fn worked_example() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let expected = Matrix::from_rows(&[
            [0.0, 1.0, 0.0, 2.0],
            [1.0, 0.0, 2.0, 0.0],
            [0.0, 3.0, 0.0, 4.0],
            [3.0, 0.0, 4.0, 0.0],
        ]);
        assert_eq!(kron(&a, &b).unwrap(), expected);
        assert_eq!(kron_oracle(&a, &b), expected);
    }

    #[test]
    fn vec_is_row_major() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(vec(&m).data(), &[1.0, 2.0, 3.0, 4.0]);
        let row = Matrix::from_rows(&[[5.0, 6.0, 7.0]]);
        assert_eq!(vec(&row).data(), row.data());
        assert_eq!(vec(&row).shape(), (3, 1));
    }

    #[test]
    fn rearrange_shapes() {
        let m = Matrix::zeros(4, 6);
        assert_eq!(rearrange(&m, 2, 3, 2, 2).unwrap().shape(), (6, 4));
        assert!(rearrange(&m, 3, 3, 2, 2).is_err());
        // unit blocks give vec(M) as a column
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let r = rearrange(&m, 2, 3, 1, 1).unwrap();
        assert_eq!(r.shape(), (6, 1));
        assert_eq!(r.data(), m.data());
    }

    #[test]
    fn rank_one_correspondence_fixed() {
        let mut rng = Rng::new(5);
        let a = random(&mut rng, 3, 2);
        let b = random(&mut rng, 2, 4);
        let r = rearrange(&kron(&a, &b).unwrap(), 3, 2, 2, 4).unwrap();
        assert_eq!(r, outer(&vec(&a), &vec(&b)));
    }

    proptest! {
        #[test]
        fn kron_matches_element_formula(seed in any::<u64>(), ar in 1usize..5, ac in 1usize..5, br in 1usize..5, bc in 1usize..5) {
            let mut rng = Rng::new(seed);
            let a = random(&mut rng, ar, ac);
            let b = random(&mut rng, br, bc);
            prop_assert_eq!(kron(&a, &b).unwrap(), kron_oracle(&a, &b));
        }

        #[test]
        fn rearrange_roundtrip(seed in any::<u64>(), m1 in 1usize..5, n1 in 1usize..5, m2 in 1usize..5, n2 in 1usize..5) {
            let mut rng = Rng::new(seed);
            let m = random(&mut rng, m1 * m2, n1 * n2);
            let r = rearrange(&m, m1, n1, m2, n2).unwrap();
            prop_assert_eq!(unrearrange(&r, m1, n1, m2, n2).unwrap(), m);
        }
        #[test]
        fn kron_bilinear_and_mixed_product(seed in any::<u64>(), n in 1usize..4, m in 1usize..4) {
            let mut rng = Rng::new(seed);
            let (a1, a2) = (random(&mut rng, n, m), random(&mut rng, n, m));
            let b = random(&mut rng, m, n);
            let lhs = kron(&a1.add(&a2).unwrap(), &b).unwrap();
            let rhs = kron(&a1, &b).unwrap().add(&kron(&a2, &b).unwrap()).unwrap();
            prop_assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12);

            // (A ⊗ B)(C ⊗ D) = AC ⊗ BD
            let (c, d) = (random(&mut rng, m, n), random(&mut rng, n, m));
            let left = kron(&a1, &b).unwrap().matmul(&kron(&c, &d).unwrap()).unwrap();
            let right = kron(&a1.matmul(&c).unwrap(), &b.matmul(&d).unwrap()).unwrap();
            prop_assert!(left.sub(&right).unwrap().max_abs() < 1e-10);

            // ||A ⊗ B||_F = ||A||_F ||B||_F
            let nk = kron(&a1, &b).unwrap().frobenius_norm();
            prop_assert!((nk - a1.frobenius_norm() * b.frobenius_norm()).abs() < 1e-12 * nk.max(1.0));
        }

        #[test]
        fn rearrange_permutes_entries(seed in any::<u64>(), m1 in 1usize..4, n1 in 1usize..4, m2 in 1usize..4, n2 in 1usize..4) {
            let mut rng = Rng::new(seed);
            let m = random(&mut rng, m1 * m2, n1 * n2);
            let r = rearrange(&m, m1, n1, m2, n2).unwrap();
            // a pure permutation of entries
            let mut a = r.data().to_vec();
            let mut b = m.data().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn rank_one_correspondence(seed in any::<u64>(), m1 in 1usize..4, n1 in 1usize..4, m2 in 1usize..4, n2 in 1usize..4) {
            let mut rng = Rng::new(seed);
            let (a, b) = (random(&mut rng, m1, n1), random(&mut rng, m2, n2));
            let r = rearrange(&kron(&a, &b).unwrap(), m1, n1, m2, n2).unwrap();
            prop_assert_eq!(r, outer(&vec(&a), &vec(&b)));
        }
    }
}
