//! Adam optimizer with bias-corrected moment estimates.

use crate::matrix::Scalar;

#[derive(Debug, Clone)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        AdamConfig {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
        }
    }
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig::with_lr(T::from_f64(0.001))
    }
}

/// Optimizer state. Moment buffers are laid out to match the flattened
/// parameter slices passed to [`AdamState::step`], in order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig<T>,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig<T>, param_lens: &[usize]) -> Self {
        AdamState {
            config,
            t: 0,
            m: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// One update over every parameter tensor. `params` and `grads` must
    /// line up with the lengths given at construction.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c = &self.config;
        let t = T::from_f64(self.t as f64);
        let bc1 = T::one() - c.beta1.powf(t);
        let bc2 = T::one() - c.beta2.powf(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), m.len());
            assert_eq!(g.len(), m.len());
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (T::one() - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (T::one() - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}
