//! Adam and global-norm gradient clipping.

use crate::tensor::Tensor;

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= f);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }
}

impl Adam {
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Descends along `grads` with step size `lr`; pass negated gradients to ascend.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![Tensor::new(vec![2], vec![3.0, 0.0]).unwrap(), Tensor::scalar(4.0)];
        let n = clip_global_norm(&mut g, 0.5);
        assert_eq!(n, 5.0);
        let after = g.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
        assert!((after - 0.5).abs() < 1e-15);
        let mut small = vec![Tensor::scalar(0.1)];
        clip_global_norm(&mut small, 0.5);
        assert_eq!(small[0].item(), 0.1);
    }

    #[test]
    fn first_adam_step_moves_by_lr_against_gradient_sign() {
        let mut p = Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap();
        let g = Tensor::new(vec![3], vec![2.0, -0.5, 0.0]).unwrap();
        let mut opt = Adam::default();
        opt.step(vec![&mut p], &[g], 0.1);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] - 1.1).abs() < 1e-6);
        assert_eq!(p.data()[2], 1.0);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = Tensor::scalar(5.0);
        let mut opt = Adam::default();
        for _ in 0..2000 {
            let g = Tensor::scalar(2.0 * (p.item() - 1.5));
            opt.step(vec![&mut p], &[g], 0.05);
        }
        assert!((p.item() - 1.5).abs() < 1e-3);
    }
}
