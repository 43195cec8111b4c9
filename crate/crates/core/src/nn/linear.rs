use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use super::{join, Params};
use crate::Real;

/// `y = x·W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Clone, Debug)]
pub struct Linear<S: Real> {
    pub weight: Array2<S>,
    pub bias: Array2<S>,
}

impl<S: Real> Linear<S> {
    /// Xavier-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((input, output), |_| S::c(rng.random_range(-a..a))),
            bias: Array2::zeros((1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<S>) -> Array2<S> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates `dW`, `db` into `grads` and returns `dx`.
    pub fn backward(&self, x: ArrayView2<S>, dy: ArrayView2<S>, grads: &mut Self) -> Array2<S> {
        general_mat_mul(S::one(), &x.t(), &dy, S::one(), &mut grads.weight);
        grads.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.t())
    }

    /// Backward pass for the parameters only.
    pub fn backward_params(&self, x: ArrayView2<S>, dy: ArrayView2<S>, grads: &mut Self) {
        general_mat_mul(S::one(), &x.t(), &dy, S::one(), &mut grads.weight);
        grads.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

impl<S: Real> Params<S> for Linear<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
