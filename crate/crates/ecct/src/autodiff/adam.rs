//! Adam optimizer over a flat list of parameter tensors.

use super::{Scalar, Tensor};

/// Textbook Adam with bias correction. State is per parameter-slot; call
/// [`AdamState::step`] with the same number of tensors every time.
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: T) -> Self {
        AdamState {
            lr,
            beta1: T::of_f64(0.9),
            beta2: T::of_f64(0.999),
            eps: T::of_f64(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) {
        assert_eq!(params.len(), grads.len(), "params/grads count");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state shape");
        self.t += 1;
        let t = T::of_f64(self.t as f64);
        let bc1 = T::one() - self.beta1.powf(t);
        let bc2 = T::one() - self.beta2.powf(t);
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.numel(), g.numel(), "param/grad shape in slot {slot}");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..p.numel() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
