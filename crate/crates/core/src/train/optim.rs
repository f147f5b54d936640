use std::fmt;
use std::str::FromStr;

use crate::error::{KfcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = KfcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(KfcError::arg(format!("unknown optimizer {s:?}; expected sgd or adam"))),
        }
    }
}

/// Optimizer hyperparameters and per-parameter state.
///
/// Weight decay is decoupled: every step first shrinks the parameters by
/// `1 - lr * weight_decay`, then applies the plain SGD or Adam update.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self { kind, lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr, weight_decay)
    }

    pub fn sgd(lr: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Moment buffers are sized on the first call and every
    /// later call must present the same buffer layout.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(KfcError::shape("parameter and gradient buffers differ in layout"));
        }
        if self.kind == OptimizerKind::Adam {
            if self.step == 0 && self.m.is_empty() {
                self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
                self.v = self.m.clone();
            } else if self.m.len() != params.len() || self.m.iter().zip(&params).any(|(m, p)| m.len() != p.len()) {
                return Err(KfcError::shape("parameter layout changed between optimizer steps"));
            }
        }
        self.step += 1;
        let shrink = 1.0 - self.lr * self.weight_decay;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &d) in p.iter_mut().zip(g) {
                        *w = *w * shrink - self.lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (((w, &d), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * d;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * d * d;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *w = *w * shrink - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_is_about_lr() {
        let mut st = OptimState::adam(0.01, 0.0);
        let mut w = vec![1.0];
        st.step(vec![&mut w], &[vec![-3.0]]).unwrap();
        assert!((w[0] - 1.0 - 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut st = OptimState::adam(0.1, 0.0);
        let mut w = vec![1.5, -2.0];
        for _ in 0..5 {
            st.step(vec![&mut w], &[vec![0.0, 0.0]]).unwrap();
        }
        assert_eq!(w, vec![1.5, -2.0]);
    }

    #[test]
    fn decoupled_decay_shrinks_before_update() {
        let mut st = OptimState::sgd(0.1, 0.5);
        let mut w = vec![2.0];
        st.step(vec![&mut w], &[vec![1.0]]).unwrap();
        assert!((w[0] - (2.0 * 0.95 - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut st = OptimState::adam(0.1, 0.0);
        let mut w = vec![1.0; 4];
        for _ in 0..200 {
            let g: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
            st.step(vec![&mut w], &[g]).unwrap();
        }
        assert!(w.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-2);
    }

    #[test]
    fn layout_mismatch() {
        let mut st = OptimState::adam(0.1, 0.0);
        let mut w = vec![1.0; 2];
        assert!(st.step(vec![&mut w], &[vec![0.0]]).is_err());
        st.step(vec![&mut w], &[vec![0.0, 0.0]]).unwrap();
        let mut w3 = vec![1.0; 3];
        assert!(st.step(vec![&mut w3], &[vec![0.0; 3]]).is_err());
    }
}
