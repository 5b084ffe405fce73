//! First-order optimizers over flat parameter buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update of every buffer in `params` with the matching gradient.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let t = self.steps as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = T::one() - T::from_f64_lossy(<f64 as num_traits::Float>::powi(self.beta1, t));
        let c2 = T::one() - T::from_f64_lossy(<f64 as num_traits::Float>::powi(self.beta2, t));
        let lr = T::from_f64_lossy(self.lr);
        let eps = T::from_f64_lossy(self.eps);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Gradient descent with heavy-ball momentum:
/// `v <- momentum * v + grad`, `x <- x - lr * v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdMomentum<T> {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<T>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(lr: f64, momentum: f64, size: usize) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![T::zero(); size],
        }
    }

    pub fn step(&mut self, x: &mut [T], grad: &[T]) {
        let mu = T::from_f64_lossy(self.momentum);
        let lr = T::from_f64_lossy(self.lr);
        for ((xi, vi), &gi) in x.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *vi = mu * *vi + gi;
            *xi = *xi - lr * *vi;
        }
    }
}
