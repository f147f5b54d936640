use crate::error::{KfcError, Result};
use crate::linalg::{Matrix, Rng};

/// Mean softmax cross-entropy over the rows of `logits` and its gradient
/// `(softmax - onehot) / N`.
pub fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(KfcError::shape(format!("{} labels for {n} rows of logits", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(KfcError::arg(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = Matrix::zeros(n, k);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(i);
        let mut sum = 0.0;
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - max).exp();
            sum += *gj;
        }
        loss += sum.ln() - (row[label] - max);
        for gj in g.iter_mut() {
            *gj /= sum * n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Inverted dropout. In training mode each entry is kept with probability
/// `keep` and scaled by `1 / keep`; the mask holds 1.0 for kept entries and 0.0
/// otherwise. In evaluation mode the input passes through with an all-ones mask.
pub fn dropout_forward(x: &Matrix, keep: f64, rng: &mut Rng, train: bool) -> Result<(Matrix, Vec<f64>)> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(KfcError::arg(format!("dropout keep probability {keep} outside (0, 1]")));
    }
    if !train || keep == 1.0 {
        return Ok((x.clone(), vec![1.0; x.len()]));
    }
    let mask: Vec<f64> = (0..x.len()).map(|_| if rng.bernoulli(keep) { 1.0 } else { 0.0 }).collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m / keep;
    }
    Ok((y, mask))
}
