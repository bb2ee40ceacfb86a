//! Fully connected layers: forward, backward, and seeded initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::matrix::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Linear,
}

/// One dense layer. `weights` is stored `(out_dim x in_dim)`, so the forward
/// pass is a `mul_bt` and both operands stream row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    /// Glorot-uniform weights, zero bias. Draw order is row-major over the
    /// weight matrix, so a given seed always produces the same layer.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut weights = Matrix::zeros(out_dim, in_dim);
        for v in weights.data_mut() {
            *v = T::from_f64(rng.random_range(-limit..limit));
        }
        DenseLayer {
            weights,
            bias: vec![T::zero(); out_dim],
            activation,
        }
    }

    pub fn cast<U: Scalar>(&self) -> DenseLayer<U> {
        DenseLayer {
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            activation: self.activation,
        }
    }
}

/// `activation(x W^T + b)` for a batch of rows.
pub fn dense_forward<T: Scalar>(layer: &DenseLayer<T>, input: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = input.mul_bt(&layer.weights)?;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (v, &b) in row.iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    if layer.activation == Activation::ReLU {
        for v in out.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
    }
    Ok(out)
}

/// Gradients of a dense layer given the upstream gradient at its output.
/// Recomputes the pre-activation to mask the ReLU.
///
/// Returns `(grad_weights, grad_bias, grad_input)`.
pub fn dense_backward<T: Scalar>(
    layer: &DenseLayer<T>,
    input: &Matrix<T>,
    grad_out: &Matrix<T>,
) -> Result<(Matrix<T>, Vec<T>, Matrix<T>)> {
    let masked = match layer.activation {
        Activation::Linear => grad_out.clone(),
        Activation::ReLU => {
            let mut pre = input.mul_bt(&layer.weights)?;
            for r in 0..pre.rows() {
                let row = pre.row_mut(r);
                for (v, &b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let mut g = grad_out.clone();
            for (gv, &p) in g.data_mut().iter_mut().zip(pre.data()) {
                if p <= T::zero() {
                    *gv = T::zero();
                }
            }
            g
        }
    };
    backward_from_masked(layer, input, &masked)
}

/// Same contract as [`dense_backward`], but takes the layer's activated
/// output instead of recomputing the pre-activation. Valid because ReLU
/// output is positive exactly where its pre-activation is positive.
pub fn dense_backward_cached<T: Scalar>(
    layer: &DenseLayer<T>,
    input: &Matrix<T>,
    output: &Matrix<T>,
    grad_out: &Matrix<T>,
) -> Result<(Matrix<T>, Vec<T>, Matrix<T>)> {
    let masked = match layer.activation {
        Activation::Linear => grad_out.clone(),
        Activation::ReLU => {
            let mut g = grad_out.clone();
            for (gv, &o) in g.data_mut().iter_mut().zip(output.data()) {
                if o <= T::zero() {
                    *gv = T::zero();
                }
            }
            g
        }
    };
    backward_from_masked(layer, input, &masked)
}

fn backward_from_masked<T: Scalar>(
    layer: &DenseLayer<T>,
    input: &Matrix<T>,
    masked: &Matrix<T>,
) -> Result<(Matrix<T>, Vec<T>, Matrix<T>)> {
    let grad_w = masked.tmul(input)?;
    let mut grad_b = vec![T::zero(); layer.out_dim()];
    for r in 0..masked.rows() {
        for (gb, &g) in grad_b.iter_mut().zip(masked.row(r)) {
            *gb += g;
        }
    }
    let grad_in = masked.mul(&layer.weights)?;
    Ok((grad_w, grad_b, grad_in))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn layer(act: Activation) -> DenseLayer<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut l = DenseLayer::init(5, 4, act, &mut rng);
        for (i, b) in l.bias.iter_mut().enumerate() {
            *b = 0.05 * i as f64 - 0.08;
        }
        l
    }

    fn batch() -> Matrix<f64> {
        Matrix::from_vec(
            3,
            5,
            (0..15).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.21).collect(),
        )
        .unwrap()
    }

    fn scalar_loss(out: &Matrix<f64>) -> f64 {
        // Weighted sum keeps every output coordinate's gradient distinct.
        out.data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * (0.3 + 0.1 * i as f64))
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::ReLU, Activation::Linear] {
            let l = layer(act);
            let x = batch();
            let out = dense_forward(&l, &x).unwrap();
            let grad_out = Matrix::from_vec(
                out.rows(),
                out.cols(),
                (0..out.rows() * out.cols())
                    .map(|i| 0.3 + 0.1 * i as f64)
                    .collect(),
            )
            .unwrap();
            let (gw, gb, gx) = dense_backward(&l, &x, &grad_out).unwrap();

            let h = 1e-6;
            for (r, c) in [(0usize, 0usize), (1, 3), (3, 4), (2, 2)] {
                let mut lp = l.clone();
                lp.weights.set(r, c, lp.weights.get(r, c) + h);
                let mut lm = l.clone();
                lm.weights.set(r, c, lm.weights.get(r, c) - h);
                let num = (scalar_loss(&dense_forward(&lp, &x).unwrap())
                    - scalar_loss(&dense_forward(&lm, &x).unwrap()))
                    / (2.0 * h);
                assert!((gw.get(r, c) - num).abs() < 1e-6, "{act:?} w[{r},{c}]");
            }
            for j in 0..l.bias.len() {
                let mut lp = l.clone();
                lp.bias[j] += h;
                let mut lm = l.clone();
                lm.bias[j] -= h;
                let num = (scalar_loss(&dense_forward(&lp, &x).unwrap())
                    - scalar_loss(&dense_forward(&lm, &x).unwrap()))
                    / (2.0 * h);
                assert!((gb[j] - num).abs() < 1e-6, "{act:?} b[{j}]");
            }
            for (r, c) in [(0usize, 0usize), (2, 4), (1, 2)] {
                let mut xp = x.clone();
                xp.set(r, c, xp.get(r, c) + h);
                let mut xm = x.clone();
                xm.set(r, c, xm.get(r, c) - h);
                let num = (scalar_loss(&dense_forward(&l, &xp).unwrap())
                    - scalar_loss(&dense_forward(&l, &xm).unwrap()))
                    / (2.0 * h);
                assert!((gx.get(r, c) - num).abs() < 1e-6, "{act:?} x[{r},{c}]");
            }
        }
    }

    #[test]
    fn cached_backward_is_bit_identical_to_recompute() {
        let l = layer(Activation::ReLU);
        let x = batch();
        let out = dense_forward(&l, &x).unwrap();
        let grad_out = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let (gw1, gb1, gx1) = dense_backward(&l, &x, &grad_out).unwrap();
        let (gw2, gb2, gx2) = dense_backward_cached(&l, &x, &out, &grad_out).unwrap();
        assert_eq!(gw1, gw2);
        assert_eq!(gb1, gb2);
        assert_eq!(gx1, gx2);
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a: DenseLayer<f32> = DenseLayer::init(640, 128, Activation::ReLU, &mut r1);
        let b: DenseLayer<f32> = DenseLayer::init(640, 128, Activation::ReLU, &mut r2);
        assert_eq!(a, b);
        let limit = (6.0f32 / (640.0 + 128.0)).sqrt();
        assert!(a.weights.data().iter().all(|w| w.abs() < limit));
        assert!(a.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn relu_clamps_negative_preactivations() {
        let l = DenseLayer {
            weights: Matrix::from_vec(1, 1, vec![1.0f64]).unwrap(),
            bias: vec![0.0],
            activation: Activation::ReLU,
        };
        let x = Matrix::from_vec(2, 1, vec![-3.0, 2.0]).unwrap();
        let out = dense_forward(&l, &x).unwrap();
        assert_eq!(out.data(), &[0.0, 2.0]);
    }
}
