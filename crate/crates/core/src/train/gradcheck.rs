//! Central finite-difference checks of the analytic gradients.

use super::layer::Layer;
use super::loss::softmax_xent;
use super::model::Model;
use crate::error::{KfcError, Result};
use crate::kfc::{self, KfcSpec, KfcWeights};
use crate::linalg::{Matrix, Rng};

/// Analytic and numeric gradients over the same flattened coordinates.
#[derive(Debug, Clone, Default)]
pub struct GradPair {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Denominator floor of [`GradPair::max_rel_error`], so that entries that are
/// zero up to rounding compare absolutely.
pub const REL_FLOOR: f64 = 1e-8;

impl GradPair {
    pub fn len(&self) -> usize {
        self.analytic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.analytic.is_empty()
    }

    /// `max |a - n| / max(|a|, |n|, REL_FLOOR)`.
    pub fn max_rel_error(&self) -> f64 {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
            .fold(0.0, f64::max)
    }

    fn extend(&mut self, other: GradPair) {
        self.analytic.extend(other.analytic);
        self.numeric.extend(other.numeric);
    }
}

fn central(f: &mut dyn FnMut(f64) -> Result<f64>, x0: f64, step: f64) -> Result<f64> {
    Ok((f(x0 + step)? - f(x0 - step)?) / (2.0 * step))
}

/// Gradients of `sum(pre_activation .* grad_out)` for every factor entry, bias
/// entry and input entry of a KFC layer. The objective is linear in each
/// coordinate, so the central difference is exact up to rounding.
pub fn kfc_layer(spec: &KfcSpec, w: &KfcWeights, x: &Matrix, grad_out: &Matrix, step: f64) -> Result<GradPair> {
    let objective = |w: &KfcWeights, x: &Matrix| -> Result<f64> {
        let (y, _) = kfc::forward_counted(spec, w, x)?;
        Ok(y.data().iter().zip(grad_out.data()).map(|(a, b)| a * b).sum())
    };
    let g = kfc::backward(spec, w, x, grad_out)?;
    let mut out = GradPair::default();
    let analytic: Vec<f64> = g.weights.param_slices().concat();
    let mut probe = w.clone();
    let mut flat = 0;
    let slices = w.param_slices().iter().map(|s| s.len()).collect::<Vec<_>>();
    for (si, len) in slices.into_iter().enumerate() {
        for e in 0..len {
            let x0 = w.param_slices()[si][e];
            let mut f = |v: f64| {
                probe.param_slices_mut()[si][e] = v;
                objective(&probe, x)
            };
            out.numeric.push(central(&mut f, x0, step)?);
            probe.param_slices_mut()[si][e] = x0;
            out.analytic.push(analytic[flat]);
            flat += 1;
        }
    }
    let mut xp = x.clone();
    for e in 0..x.len() {
        let x0 = x.data()[e];
        let mut f = |v: f64| {
            xp.data_mut()[e] = v;
            objective(w, &xp)
        };
        out.numeric.push(central(&mut f, x0, step)?);
        xp.data_mut()[e] = x0;
    }
    out.analytic.extend_from_slice(g.input.data());
    Ok(out)
}

/// Gradients of the mean softmax cross-entropy of `model` with respect to
/// every parameter and input entry. Dropout must be disabled (keep = 1).
pub fn model_loss(model: &Model, x: &Matrix, labels: &[usize], step: f64) -> Result<GradPair> {
    if model.layers().iter().any(|l| matches!(l, Layer::Dropout { keep } if *keep < 1.0)) {
        return Err(KfcError::arg("gradient checks need dropout disabled"));
    }
    let trace = model.forward_train(x, &mut Rng::new(0))?;
    let (_, g_logits) = softmax_xent(&trace.output, labels)?;
    let (grads, gx) = model.backward(&trace, &g_logits)?;

    let mut out = GradPair::default();
    let mut probe = model.clone();
    for (si, g) in grads.iter().enumerate() {
        for (e, &a) in g.iter().enumerate() {
            let x0 = model.param_slices()[si][e];
            let mut f = |v: f64| {
                probe.param_slices_mut()[si][e] = v;
                Ok(softmax_xent(&probe.predict(x)?, labels)?.0)
            };
            let n = central(&mut f, x0, step)?;
            probe.param_slices_mut()[si][e] = x0;
            out.extend(GradPair { analytic: vec![a], numeric: vec![n] });
        }
    }
    let mut xp = x.clone();
    for e in 0..x.len() {
        let x0 = x.data()[e];
        let mut f = |v: f64| {
            xp.data_mut()[e] = v;
            Ok(softmax_xent(&model.predict(&xp)?, labels)?.0)
        };
        out.numeric.push(central(&mut f, x0, step)?);
        xp.data_mut()[e] = x0;
    }
    out.analytic.extend_from_slice(gx.data());
    Ok(out)
}
