//! AdamW, cosine learning-rate decay and global-norm clipping.

use std::f64::consts::PI;

use crate::numerics::Tensor;

/// Cosine decay from `base` at step 0 to `last` at step `total − 1`.
pub fn cosine_lr(step: usize, total: usize, base: f64, last: f64) -> f64 {
    if total <= 1 {
        return base;
    }
    let progress = step.min(total - 1) as f64 / (total - 1) as f64;
    last + 0.5 * (base - last) * (1.0 + (PI * progress).cos())
}

/// Global L2 norm over every gradient.
pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    grads
        .into_iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads.iter().map(|g| &**g));
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `params[i]` pairs with `grads[i]`; `decay[i]` selects
    /// decoupled weight decay for that tensor.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor], decay: &[bool], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), decay.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let wd = if decay[i] { self.weight_decay } else { 0.0 };
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *x -= lr * (m_hat / (v_hat.sqrt() + self.eps) + wd * *x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 11, 1.0, 0.0), 1.0);
        assert!((cosine_lr(10, 11, 1.0, 0.1) - 0.1).abs() < 1e-15);
        assert!((cosine_lr(5, 11, 1.0, 0.0) - 0.5).abs() < 1e-12);
        assert_eq!(cosine_lr(3, 1, 0.7, 0.1), 0.7);
    }

    #[test]
    fn clipping_rescales_to_max_norm() {
        let mut a = Tensor::new(vec![2], vec![3.0, 0.0]).unwrap();
        let mut b = Tensor::new(vec![1], vec![4.0]).unwrap();
        let before = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(before, 5.0);
        assert!((global_norm([&a, &b]) - 1.0).abs() < 1e-12);
        assert!((a.data()[0] - 0.6).abs() < 1e-12);
        let after = clip_global_norm(&mut [&mut a, &mut b], 10.0);
        assert!((after - 1.0).abs() < 1e-12);
        assert!((b.data()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        let mut p = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::new(vec![2], vec![0.5, -2.0]).unwrap();
        let mut opt = AdamW::new(0.9, 0.999, 1e-12, 0.0);
        opt.step(&mut [&mut p], &[&g], &[false], 0.1);
        assert!((p.data()[0] - 0.9).abs() < 1e-9);
        assert!((p.data()[1] + 0.9).abs() < 1e-9);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut p = Tensor::new(vec![1], vec![2.0]).unwrap();
        let g = Tensor::zeros(&[1]);
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.5);
        opt.step(&mut [&mut p], &[&g], &[true], 0.1);
        assert!((p.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut p = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let g = Tensor::new(vec![3], vec![5.0, -1.0, 0.3]).unwrap();
        let mut opt = AdamW::new(0.9, 0.999, 1e-8, 0.02);
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[&g], &[true], 0.0);
        }
        assert_eq!(p.data(), &[1.0, 2.0, 3.0]);
    }
}
