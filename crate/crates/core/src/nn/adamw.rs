use ndarray::{Array2, Zip};

use super::{named_params, param_refs_mut, Params};
use crate::Real;

/// Cosine-decayed learning rate, `lr_max` at step 0 and `lr_min` at `total`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    let t = if total == 0 {
        1.0
    } else {
        (step.min(total) as f64) / total as f64
    };
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Linear warmup to `lr_max` over `warmup` steps, then cosine decay to
/// `lr_min` at `total`.
pub fn warmup_cosine_lr(step: usize, total: usize, warmup: usize, lr_max: f64, lr_min: f64) -> f64 {
    if step < warmup {
        return lr_max * (step + 1) as f64 / warmup as f64;
    }
    cosine_lr(step - warmup, total.saturating_sub(warmup), lr_max, lr_min)
}

/// AdamW with bias correction and decoupled weight decay.
///
/// Weight decay applies to matrices only; vectors (biases, norm scales,
/// CLS and mask embeddings) are not decayed.
#[derive(Clone, Debug)]
pub struct AdamW<S: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Array2<S>>,
    v: Vec<Array2<S>>,
}

impl<S: Real> AdamW<S> {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: Params<S>>(&mut self, params: &mut P, grads: &P, lr: f64) {
        let g: Vec<&Array2<S>> = named_params(grads).into_iter().map(|(_, t)| t).collect();
        let p = param_refs_mut(params);
        assert_eq!(p.len(), g.len(), "parameter/gradient structure mismatch");
        if self.m.is_empty() {
            self.m = g.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (S::c(self.beta1), S::c(self.beta2));
        let (one_b1, one_b2) = (S::c(1.0 - self.beta1), S::c(1.0 - self.beta2));
        let step_size = S::c(lr / bc1);
        let inv_bc2 = S::c(1.0 / bc2);
        let eps = S::c(self.eps);
        for (i, (theta, grad)) in p.into_iter().zip(g).enumerate() {
            let decay = if theta.nrows() > 1 && theta.ncols() > 1 {
                S::c(1.0 - lr * self.weight_decay)
            } else {
                S::one()
            };
            Zip::from(theta)
                .and(grad)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|th, &gr, m, v| {
                    *m = b1 * *m + one_b1 * gr;
                    *v = b2 * *v + one_b2 * gr * gr;
                    *th = *th * decay - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use crate::rng::stream;

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut rng = stream(1, &[]);
        let mut layer = Linear::<f64>::new(3, 2, &mut rng);
        let before = layer.clone();
        let grads = crate::nn::zeros_like(&layer);
        let mut opt = AdamW::new(0.0);
        opt.step(&mut layer, &grads, 1e-2);
        assert_eq!(layer.weight, before.weight);
        assert_eq!(layer.bias, before.bias);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε)
        let mut p = Linear::<f64> {
            weight: Array2::from_elem((1, 1), 0.5),
            bias: Array2::zeros((1, 1)),
        };
        let mut g = crate::nn::zeros_like(&p);
        g.weight[(0, 0)] = -0.2;
        g.bias[(0, 0)] = 3.0;
        let mut opt = AdamW::new(0.0);
        opt.step(&mut p, &g, 1e-3);
        let expect_w = 0.5 + 1e-3 * 0.2 / (0.2 + 1e-8);
        let expect_b = -1e-3 * 3.0 / (3.0 + 1e-8);
        assert!((p.weight[(0, 0)] - expect_w).abs() < 1e-15);
        assert!((p.bias[(0, 0)] - expect_b).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints() {
        assert!((cosine_lr(0, 100, 3e-4, 1e-6) - 3e-4).abs() < 1e-18);
        assert!((cosine_lr(100, 100, 3e-4, 1e-6) - 1e-6).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 1.0, 0.0) - 0.5).abs() < 1e-12);
    }
}
