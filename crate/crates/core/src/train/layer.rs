use crate::activation::{abs_tanh, abs_tanh_grad};
use crate::error::{KfcError, Result};
use crate::kfc::{self, KfcSpec, KfcWeights};
use crate::linalg::{Matrix, Rng};

/// One stage of a feed-forward model. The softmax cross-entropy head is not a
/// layer: [`super::softmax_xent`] is applied to the last layer's output.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Non-overlapping `size x size` average pooling over a `(C, H, W)` input.
    AvgPool {
        channels: usize,
        height: usize,
        width: usize,
        size: usize,
    },
    Dense {
        name: String,
        weight: Matrix,
        bias: Vec<f64>,
    },
    Kfc {
        name: String,
        spec: KfcSpec,
        weights: KfcWeights,
    },
    AbsTanh,
    /// Inverted dropout keeping each unit with probability `keep`.
    Dropout {
        keep: f64,
    },
}

impl Layer {
    pub fn dense(name: &str, inputs: usize, outputs: usize) -> Self {
        Layer::Dense { name: name.to_string(), weight: Matrix::zeros(inputs, outputs), bias: vec![0.0; outputs] }
    }

    pub fn kfc(name: &str, spec: KfcSpec) -> Self {
        let weights = KfcWeights::zeros(&spec);
        Layer::Kfc { name: name.to_string(), spec, weights }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Layer::Dense { name, .. } | Layer::Kfc { name, .. } => Some(name),
            _ => None,
        }
    }

    /// Input width, or `None` for elementwise layers.
    pub fn in_dim(&self) -> Option<usize> {
        match self {
            Layer::AvgPool { channels, height, width, .. } => Some(channels * height * width),
            Layer::Dense { weight, .. } => Some(weight.rows()),
            Layer::Kfc { spec, .. } => Some(spec.input_dim()),
            Layer::AbsTanh | Layer::Dropout { .. } => None,
        }
    }

    pub fn out_dim(&self) -> Option<usize> {
        match self {
            Layer::AvgPool { channels, height, width, size } => Some(channels * (height / size) * (width / size)),
            Layer::Dense { weight, .. } => Some(weight.cols()),
            Layer::Kfc { spec, .. } => Some(spec.output_dim()),
            Layer::AbsTanh | Layer::Dropout { .. } => None,
        }
    }

    pub fn param_count(&self) -> u64 {
        match self {
            Layer::Dense { weight, bias, .. } => (weight.len() + bias.len()) as u64,
            Layer::Kfc { spec, .. } => kfc::count_params(spec) + spec.output_dim() as u64,
            _ => 0,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Layer::AvgPool { channels, height, width, size } => {
                if *size == 0 || *channels == 0 || height % size != 0 || width % size != 0 {
                    return Err(KfcError::arg(format!(
                        "pool size {size} must divide a positive {height}x{width} input"
                    )));
                }
            }
            Layer::Dense { name, weight, bias } => {
                if bias.len() != weight.cols() {
                    return Err(KfcError::shape(format!(
                        "layer {name}: bias length {} for {} outputs",
                        bias.len(),
                        weight.cols()
                    )));
                }
            }
            Layer::Kfc { spec, weights, .. } => weights.check(spec)?,
            Layer::AbsTanh => {}
            Layer::Dropout { keep } => {
                if !(*keep > 0.0 && *keep <= 1.0) {
                    return Err(KfcError::arg(format!("dropout keep probability {keep} outside (0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight.data(), bias],
            Layer::Kfc { weights, .. } => weights.param_slices(),
            _ => Vec::new(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight.data_mut(), bias],
            Layer::Kfc { weights, .. } => weights.param_slices_mut(),
            _ => Vec::new(),
        }
    }

    /// Forward pass. `dropout` carries the mask stream in training mode and is
    /// `None` in evaluation mode; the second value is the dropout mask, if any.
    pub(crate) fn forward(&self, x: &Matrix, dropout: Option<&mut Rng>) -> Result<(Matrix, Option<Vec<f64>>)> {
        let y = match self {
            Layer::AvgPool { channels, height, width, size } => avg_pool(x, *channels, *height, *width, *size),
            Layer::Dense { weight, bias, .. } => {
                let mut y = x.matmul(weight)?;
                y.add_row_vector(bias)?;
                y
            }
            Layer::Kfc { spec, weights, .. } => kfc::forward_counted(spec, weights, x)?.0,
            Layer::AbsTanh => x.map(abs_tanh),
            Layer::Dropout { keep } => match dropout {
                Some(rng) => {
                    let (y, mask) = super::dropout_forward(x, *keep, rng, true)?;
                    return Ok((y, Some(mask)));
                }
                None => x.clone(),
            },
        };
        Ok((y, None))
    }

    /// Returns the input gradient and appends parameter gradients, in
    /// [`Layer::param_slices`] order, to `grads`.
    pub(crate) fn backward(
        &self,
        x: &Matrix,
        mask: Option<&[f64]>,
        g: &Matrix,
        grads: &mut Vec<Vec<f64>>,
    ) -> Result<Matrix> {
        match self {
            Layer::AvgPool { channels, height, width, size } => {
                Ok(avg_pool_backward(g, *channels, *height, *width, *size))
            }
            Layer::Dense { weight, .. } => {
                grads.push(x.t_matmul(g)?.into_data());
                grads.push(g.column_sums());
                g.matmul_t(weight)
            }
            Layer::Kfc { spec, weights, .. } => {
                let kg = kfc::backward(spec, weights, x, g)?;
                grads.extend(kg.weights.param_slices().into_iter().map(<[f64]>::to_vec));
                Ok(kg.input)
            }
            Layer::AbsTanh => {
                let mut out = g.clone();
                for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
                    *o *= abs_tanh_grad(v);
                }
                Ok(out)
            }
            Layer::Dropout { keep } => {
                let mut out = g.clone();
                if let Some(mask) = mask {
                    for (o, &m) in out.data_mut().iter_mut().zip(mask) {
                        *o *= m / keep;
                    }
                }
                Ok(out)
            }
        }
    }
}

fn avg_pool(x: &Matrix, channels: usize, height: usize, width: usize, size: usize) -> Matrix {
    let (oh, ow) = (height / size, width / size);
    let scale = 1.0 / (size * size) as f64;
    let mut out = Matrix::zeros(x.rows(), channels * oh * ow);
    for n in 0..x.rows() {
        let src = x.row(n);
        let dst = out.row_mut(n);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    dst[(c * oh + h / size) * ow + w / size] += src[(c * height + h) * width + w] * scale;
                }
            }
        }
    }
    out
}

fn avg_pool_backward(g: &Matrix, channels: usize, height: usize, width: usize, size: usize) -> Matrix {
    let (oh, ow) = (height / size, width / size);
    let scale = 1.0 / (size * size) as f64;
    let mut out = Matrix::zeros(g.rows(), channels * height * width);
    for n in 0..g.rows() {
        let src = g.row(n);
        let dst = out.row_mut(n);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    dst[(c * height + h) * width + w] = src[(c * oh + h / size) * ow + w / size] * scale;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_averages_blocks() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]]);
        let layer = Layer::AvgPool { channels: 2, height: 2, width: 2, size: 2 };
        let (y, _) = layer.forward(&x, None).unwrap();
        assert_eq!(y.data(), &[2.5, 6.5]);
        let g = layer.backward(&x, None, &Matrix::from_rows(&[[4.0, 8.0]]), &mut Vec::new()).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn validation() {
        assert!(Layer::AvgPool { channels: 1, height: 5, width: 4, size: 2 }.validate().is_err());
        assert!(Layer::Dropout { keep: 0.0 }.validate().is_err());
        assert!(Layer::Dropout { keep: 1.0 }.validate().is_ok());
        assert_eq!(Layer::dense("fc", 288, 256).param_count(), 73984);
    }
}
