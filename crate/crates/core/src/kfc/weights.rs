use super::spec::KfcSpec;
use crate::error::{KfcError, Result};
use crate::linalg::{kron, Matrix, Rng};

/// Factors of one Kronecker term, outermost first.
#[derive(Debug, Clone, PartialEq)]
pub struct KronTerm {
    pub factors: Vec<Matrix>,
}

impl KronTerm {
    pub fn materialize(&self) -> Result<Matrix> {
        let mut acc = self.factors[0].clone();
        for f in &self.factors[1..] {
            acc = kron(&acc, f)?;
        }
        Ok(acc)
    }
}

/// Trainable state of a KFC layer: `groups[j][i]` is term `i` of group `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct KfcWeights {
    pub groups: Vec<Vec<KronTerm>>,
    pub bias: Vec<f64>,
}

impl KfcWeights {
    pub fn zeros(spec: &KfcSpec) -> Self {
        let groups = spec
            .groups()
            .iter()
            .map(|g| {
                (0..g.rank)
                    .map(|_| KronTerm {
                        factors: g.shape.factors().iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
                    })
                    .collect()
            })
            .collect();
        Self { groups, bias: vec![0.0; spec.output_dim()] }
    }

    /// Errors unless every factor shape and the bias length match `spec`.
    pub fn check(&self, spec: &KfcSpec) -> Result<()> {
        if self.bias.len() != spec.output_dim() {
            return Err(KfcError::shape(format!(
                "bias has length {}, layer output is {}",
                self.bias.len(),
                spec.output_dim()
            )));
        }
        if self.groups.len() != spec.groups().len() {
            return Err(KfcError::shape(format!(
                "weights have {} groups, spec has {}",
                self.groups.len(),
                spec.groups().len()
            )));
        }
        for (j, (terms, g)) in self.groups.iter().zip(spec.groups()).enumerate() {
            if terms.len() != g.rank {
                return Err(KfcError::shape(format!("group {j}: {} terms for rank {}", terms.len(), g.rank)));
            }
            for term in terms {
                let shapes: Vec<(usize, usize)> = term.factors.iter().map(Matrix::shape).collect();
                if shapes != g.shape.factors() {
                    return Err(KfcError::shape(format!(
                        "group {j}: factor shapes {shapes:?}, spec wants {:?}",
                        g.shape.factors()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn terms(&self) -> impl Iterator<Item = &KronTerm> {
        self.groups.iter().flatten()
    }

    /// Factor buffers followed by the bias, in a fixed order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for term in self.groups.iter_mut().flatten() {
            for f in term.factors.iter_mut() {
                out.push(f.data_mut());
            }
        }
        out.push(&mut self.bias);
        out
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for term in self.groups.iter().flatten() {
            for f in &term.factors {
                out.push(f.data());
            }
        }
        out.push(&self.bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Per-factor uniform bound used by [`init_weights`].
///
/// A dense Glorot-uniform layer has entry variance `2 / (fan_in + fan_out)`.
/// Each materialized entry is a sum of `total_rank` products of `d` independent
/// uniforms, so every factor gets variance `(target / total_rank)^(1/d)` and
/// bound `sqrt(3 * variance)`.
pub fn init_bound(spec: &KfcSpec, factor_count: usize) -> f64 {
    let target = 2.0 / (spec.input_dim() + spec.output_dim()) as f64;
    let per_factor_var = (target / spec.total_rank() as f64).powf(1.0 / factor_count as f64);
    (3.0 * per_factor_var).sqrt()
}

/// Random factors with the variance of a dense Glorot layer of the same size; zero bias.
pub fn init_weights(spec: &KfcSpec, rng: &mut Rng) -> KfcWeights {
    let mut w = KfcWeights::zeros(spec);
    for (terms, g) in w.groups.iter_mut().zip(spec.groups()) {
        let bound = init_bound(spec, g.shape.factors().len());
        for term in terms.iter_mut() {
            for f in term.factors.iter_mut() {
                for v in f.data_mut() {
                    *v = rng.uniform(-bound, bound).expect("bound is positive");
                }
            }
        }
    }
    w
}

/// Dense `input_dim x output_dim` weight equal to the layer's Kronecker sum.
/// Test oracle only; forward never calls it.
pub fn materialize(spec: &KfcSpec, w: &KfcWeights) -> Result<Matrix> {
    w.check(spec)?;
    let (n_in, n_out) = (spec.input_dim(), spec.output_dim());
    let mut out = Matrix::zeros(n_in, n_out);
    for (terms, g) in w.groups.iter().zip(spec.groups()) {
        let mut group_sum = Matrix::zeros(spec.padded_input_dim(), n_out);
        for term in terms {
            group_sum.add_assign(&term.materialize()?)?;
        }
        for j in 0..n_in {
            let src = spec.permuted_index(g.formulation, j);
            for (d, &s) in out.row_mut(j).iter_mut().zip(group_sum.row(src)) {
                *d += s;
            }
        }
    }
    Ok(out)
}
