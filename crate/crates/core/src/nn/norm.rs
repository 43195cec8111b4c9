use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{join, Params};
use crate::Real;

const EPS: f64 = 1e-6;

/// Per-token layer normalisation with learned scale and offset.
#[derive(Clone, Debug)]
pub struct LayerNorm<S: Real> {
    pub gamma: Array2<S>,
    pub beta: Array2<S>,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache<S: Real> {
    xhat: Array2<S>,
    inv_std: Array1<S>,
}

impl<S: Real> LayerNorm<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array2::ones((1, dim)),
            beta: Array2::zeros((1, dim)),
        }
    }

    pub fn forward(&self, x: ArrayView2<S>) -> (Array2<S>, LayerNormCache<S>) {
        let d = S::c(x.ncols() as f64);
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<S>() / d;
            *is = S::one() / (var + S::c(EPS)).sqrt();
            let s = *is;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<S>, dy: ArrayView2<S>, grads: &mut Self) -> Array2<S> {
        grads.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        grads.beta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = &dy * &self.gamma;
        let d = S::c(dy.ncols() as f64);
        let mut dx = Array2::zeros(dy.raw_dim());
        for i in 0..dy.nrows() {
            let g = dxhat.row(i);
            let xh = cache.xhat.row(i);
            let sum_g = g.sum();
            let sum_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<S>();
            let k = cache.inv_std[i] / d;
            for j in 0..dy.ncols() {
                dx[(i, j)] = k * (d * g[j] - sum_g - xh[j] * sum_gx);
            }
        }
        dx
    }
}

impl<S: Real> Params<S> for LayerNorm<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}
