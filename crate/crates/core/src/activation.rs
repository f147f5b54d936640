use crate::linalg::Matrix;

/// `|tanh x|`.
#[inline]
pub fn abs_tanh(x: f64) -> f64 {
    x.tanh().abs()
}

/// Derivative of `|tanh x|`: `sign(x) * (1 - tanh^2 x)`, and 0 at the kink.
#[inline]
pub fn abs_tanh_grad(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        let t = x.tanh();
        x.signum() * (1.0 - t * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    AbsTanh,
}

impl Activation {
    pub fn apply(self, m: &Matrix) -> Matrix {
        match self {
            Activation::Identity => m.clone(),
            Activation::AbsTanh => m.map(abs_tanh),
        }
    }

    pub fn apply_in_place(self, m: &mut Matrix) {
        if self == Activation::AbsTanh {
            m.data_mut().iter_mut().for_each(|v| *v = abs_tanh(*v));
        }
    }

    /// Multiplies `grad` by the derivative evaluated at the pre-activation.
    pub fn backprop(self, pre: &Matrix, grad: &mut Matrix) {
        if self == Activation::AbsTanh {
            for (g, &x) in grad.data_mut().iter_mut().zip(pre.data()) {
                *g *= abs_tanh_grad(x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kink_at_zero() {
        assert_eq!(abs_tanh(0.0), 0.0);
        assert_eq!(abs_tanh_grad(0.0), 0.0);
    }

    #[test]
    fn negative_one() {
        let t1 = 1f64.tanh();
        assert!((abs_tanh(-1.0) - 0.761_594_155_955_764_9).abs() < 1e-15);
        assert_eq!(abs_tanh_grad(-1.0), -(1.0 - t1 * t1));
    }

    #[test]
    fn gradient_matches_central_difference() {
        for &x in &[-2.5, -0.3, 0.01, 0.7, 3.0] {
            let h = 1e-6;
            let fd = (abs_tanh(x + h) - abs_tanh(x - h)) / (2.0 * h);
            assert!((fd - abs_tanh_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn elementwise_preserves_shape() {
        let m = Matrix::from_rows(&[[-1.0, 0.0, 2.0], [0.5, -0.5, 1.0]]);
        let y = Activation::AbsTanh.apply(&m);
        assert_eq!(y.shape(), (2, 3));
        assert!(y.data().iter().all(|&v| v >= 0.0));
    }
}
