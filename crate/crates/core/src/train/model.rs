use std::fmt::Write as _;

use super::layer::Layer;
use crate::error::{KfcError, Result};
use crate::kfc::{init_weights, FactorShape, Formulation, InputKind, KfcGroup, KfcSpec};
use crate::linalg::{Matrix, Rng};

const TOPOLOGY_HEADER: &str = "kfc-topology v1";

/// A feed-forward stack whose output feeds a softmax cross-entropy head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

/// Activations kept from a training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Matrix>,
    masks: Vec<Option<Vec<f64>>>,
    pub output: Matrix,
}

impl Model {
    pub fn new(name: &str, layers: Vec<Layer>) -> Result<Self> {
        let mut dims: Option<(usize, usize)> = None;
        for layer in &layers {
            layer.validate()?;
            if let (Some(i), Some(o)) = (layer.in_dim(), layer.out_dim()) {
                dims = match dims {
                    None => Some((i, o)),
                    Some((first, prev)) if prev == i => Some((first, o)),
                    Some((_, prev)) => {
                        return Err(KfcError::shape(format!(
                            "layer {} takes {i} inputs but the previous layer produces {prev}",
                            layer.name().unwrap_or("(pool)")
                        )));
                    }
                };
            }
        }
        let (input_dim, output_dim) = dims.ok_or_else(|| KfcError::arg("a model needs at least one sized layer"))?;
        Ok(Self { name: name.to_string(), layers, input_dim, output_dim })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name() == Some(name))
    }

    /// Swaps in a new layer at `index`; the chain must stay consistent.
    pub fn replace_layer(&mut self, index: usize, layer: Layer) -> Result<Layer> {
        let mut layers = self.layers.clone();
        let old = std::mem::replace(&mut layers[index], layer);
        *self = Model::new(&self.name, layers)?;
        Ok(old)
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(Layer::param_slices).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(Layer::param_slices_mut).collect()
    }

    /// Glorot-uniform dense weights, variance-matched KFC factors, zero biases.
    pub fn init(&mut self, rng: &mut Rng) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias, .. } => {
                    let bound = (6.0 / (weight.rows() + weight.cols()) as f64).sqrt();
                    for v in weight.data_mut() {
                        *v = rng.uniform(-bound, bound).expect("bound is positive");
                    }
                    bias.iter_mut().for_each(|b| *b = 0.0);
                }
                Layer::Kfc { spec, weights, .. } => *weights = init_weights(spec, rng),
                _ => {}
            }
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(KfcError::shape(format!("model takes {} features, got {}", self.input_dim, x.cols())));
        }
        Ok(())
    }

    /// Evaluation-mode logits.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, None)?.0;
        }
        Ok(h)
    }

    /// Training-mode forward pass; dropout masks are drawn from `rng`.
    pub fn forward_train(&self, x: &Matrix, rng: &mut Rng) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, mask) = layer.forward(&h, Some(&mut *rng))?;
            inputs.push(std::mem::replace(&mut h, y));
            masks.push(mask);
        }
        Ok(Trace { inputs, masks, output: h })
    }

    /// Parameter gradients in [`Model::param_slices`] order, plus the input gradient.
    pub fn backward(&self, trace: &Trace, grad_out: &Matrix) -> Result<(Vec<Vec<f64>>, Matrix)> {
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&trace.inputs[i], trace.masks[i].as_deref(), &g, &mut per_layer[i])?;
        }
        Ok((per_layer.into_iter().flatten().collect(), g))
    }

    /// Layer structure as text, one layer per line. Two models with equal
    /// topology text accept each other's parameters.
    pub fn topology(&self) -> String {
        let mut s = format!("{TOPOLOGY_HEADER}\nmodel {}\n", self.name);
        s.push_str(&self.structure());
        s
    }

    /// The layer lines of [`Model::topology`], without header and name.
    pub fn structure(&self) -> String {
        let mut s = String::new();
        for layer in &self.layers {
            match layer {
                Layer::AvgPool { channels, height, width, size } => {
                    writeln!(s, "avgpool {channels} {height} {width} {size}").unwrap();
                }
                Layer::Dense { name, weight, .. } => {
                    writeln!(s, "dense {name} {} {}", weight.rows(), weight.cols()).unwrap();
                }
                Layer::Kfc { name, spec, .. } => {
                    match spec.input() {
                        InputKind::Tensor { channels, height, width } => {
                            writeln!(s, "kfc {name} tensor {channels} {height} {width} out {} pad 0", spec.output_dim())
                        }
                        InputKind::Matrix { features } => writeln!(
                            s,
                            "kfc {name} matrix {features} out {} pad {}",
                            spec.output_dim(),
                            spec.input_pad()
                        ),
                    }
                    .unwrap();
                    for g in spec.groups() {
                        writeln!(s, "group {} rank {} {}", g.formulation, g.rank, g.shape).unwrap();
                    }
                }
                Layer::AbsTanh => s.push_str("abs_tanh\n"),
                Layer::Dropout { keep } => writeln!(s, "dropout {keep}").unwrap(),
            }
        }
        s
    }

    /// Rebuilds a model with zeroed parameters from [`Model::topology`] text.
    pub fn from_topology(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| KfcError::Checkpoint(format!("topology line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, TOPOLOGY_HEADER)) => {}
            other => return Err(bad(1, format!("expected {TOPOLOGY_HEADER:?}, found {:?}", other.map(|o| o.1)))),
        }
        let name = match lines.next() {
            Some((_, l)) if l.starts_with("model ") => l["model ".len()..].trim().to_string(),
            other => return Err(bad(2, format!("expected model name, found {:?}", other.map(|o| o.1)))),
        };

        let mut layers: Vec<Layer> = Vec::new();
        // a pending KFC layer collects its group lines until the next layer
        type Pending = Option<(usize, String, InputKind, usize, usize, Vec<KfcGroup>)>;
        let mut pending: Pending = None;
        let flush = |pending: &mut Pending, layers: &mut Vec<Layer>| -> Result<()> {
            if let Some((line, name, input, out, pad, groups)) = pending.take() {
                let spec = KfcSpec::new(input, out, pad, groups).map_err(|e| bad(line, e.to_string()))?;
                layers.push(Layer::kfc(&name, spec));
            }
            Ok(())
        };
        for (line, l) in lines {
            let tok: Vec<&str> = l.split_whitespace().collect();
            let num = |i: usize| -> Result<usize> {
                tok.get(i)
                    .ok_or_else(|| bad(line, format!("missing field {i} in {l:?}")))?
                    .parse::<usize>()
                    .map_err(|_| bad(line, format!("field {i} of {l:?} is not a count")))
            };
            let word = |i: usize, expect: &str| -> Result<()> {
                if tok.get(i) == Some(&expect) {
                    Ok(())
                } else {
                    Err(bad(line, format!("expected {expect:?} at field {i} of {l:?}")))
                }
            };
            if tok[0] == "group" {
                let Some(p) = pending.as_mut() else {
                    return Err(bad(line, "group line outside a kfc layer".into()));
                };
                if tok.len() != 5 {
                    return Err(bad(line, format!("malformed group line {l:?}")));
                }
                word(2, "rank")?;
                let formulation: Formulation = tok[1].parse().map_err(|e: KfcError| bad(line, e.to_string()))?;
                let rank = num(3)?;
                let shape = parse_factor_shape(tok[4]).map_err(|e| bad(line, e.to_string()))?;
                p.5.push(KfcGroup { formulation, shape, rank });
                continue;
            }
            flush(&mut pending, &mut layers)?;
            match tok[0] {
                "avgpool" if tok.len() == 5 => {
                    layers.push(Layer::AvgPool { channels: num(1)?, height: num(2)?, width: num(3)?, size: num(4)? })
                }
                "dense" if tok.len() == 4 => layers.push(Layer::dense(tok[1], num(2)?, num(3)?)),
                "kfc" if tok.len() == 10 && tok[2] == "tensor" => {
                    word(6, "out")?;
                    word(8, "pad")?;
                    let input = InputKind::Tensor { channels: num(3)?, height: num(4)?, width: num(5)? };
                    pending = Some((line, tok[1].to_string(), input, num(7)?, num(9)?, Vec::new()));
                }
                "kfc" if tok.len() == 8 && tok[2] == "matrix" => {
                    word(4, "out")?;
                    word(6, "pad")?;
                    let input = InputKind::Matrix { features: num(3)? };
                    pending = Some((line, tok[1].to_string(), input, num(5)?, num(7)?, Vec::new()));
                }
                "abs_tanh" if tok.len() == 1 => layers.push(Layer::AbsTanh),
                "dropout" if tok.len() == 2 => {
                    let keep =
                        tok[1].parse::<f64>().map_err(|_| bad(line, format!("bad keep probability {:?}", tok[1])))?;
                    layers.push(Layer::Dropout { keep });
                }
                _ => return Err(bad(line, format!("unrecognized layer line {l:?}"))),
            }
        }
        flush(&mut pending, &mut layers)?;
        Model::new(&name, layers).map_err(|e| KfcError::Checkpoint(format!("topology: {e}")))
    }
}

/// Parses `RxC,RxC[,RxC]`.
pub fn parse_factor_shape(s: &str) -> Result<FactorShape> {
    let factors = s
        .split(',')
        .map(|p| {
            let (r, c) = p.split_once('x').ok_or_else(|| KfcError::arg(format!("factor {p:?} is not RxC")))?;
            let parse = |v: &str| v.parse::<usize>().map_err(|_| KfcError::arg(format!("factor {p:?} is not RxC")));
            Ok((parse(r)?, parse(c)?))
        })
        .collect::<Result<Vec<_>>>()?;
    FactorShape::new(factors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Model {
        let dims = (2, 2, 2, 8);
        let spec = KfcSpec::combine(&[
            KfcSpec::formulation(Formulation::II, dims, &[4, 2], 2).unwrap(),
            KfcSpec::formulation(Formulation::IV, dims, &[2, 4], 1).unwrap(),
        ])
        .unwrap();
        Model::new(
            "sample",
            vec![
                Layer::AvgPool { channels: 2, height: 4, width: 4, size: 2 },
                Layer::dense("a", 8, 8),
                Layer::AbsTanh,
                Layer::kfc("b", spec),
                Layer::Dropout { keep: 0.75 },
                Layer::kfc("c", KfcSpec::kfcm_padded(8, 6, 1).unwrap()),
                Layer::dense("out", 6, 3),
            ],
        )
        .unwrap()
    }

    #[test]
    fn chain_dims() {
        let m = sample();
        assert_eq!((m.input_dim(), m.output_dim()), (32, 3));
        assert!(Model::new("x", vec![Layer::dense("a", 4, 5), Layer::dense("b", 4, 2)]).is_err());
        assert!(Model::new("x", vec![Layer::AbsTanh]).is_err());
    }

    #[test]
    fn topology_round_trip() {
        let m = sample();
        let text = m.topology();
        assert!(text.contains("group II rank 2 2x4,4x2\n"));
        assert_eq!(Model::from_topology(&text).unwrap(), m);
    }

    #[test]
    fn topology_errors_name_the_line() {
        let err = Model::from_topology("kfc-topology v1\nmodel m\ndense a 4 x\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(Model::from_topology("kfc-topology v2\nmodel m\n").is_err());
        assert!(Model::from_topology("kfc-topology v1\nmodel m\ngroup II rank 1 2x2,2x2\n").is_err());
    }

    #[test]
    fn backward_layout_matches_params() {
        let mut m = sample();
        m.init(&mut Rng::new(1));
        let x = Matrix::from_fn(3, 32, |i, j| ((i * 32 + j) as f64).sin());
        let trace = m.forward_train(&x, &mut Rng::new(2)).unwrap();
        let (grads, gx) = m.backward(&trace, &Matrix::from_fn(3, 3, |_, _| 0.1)).unwrap();
        let shapes: Vec<usize> = m.param_slices().iter().map(|s| s.len()).collect();
        assert_eq!(grads.iter().map(Vec::len).collect::<Vec<_>>(), shapes);
        assert_eq!(gx.shape(), (3, 32));
    }
}
