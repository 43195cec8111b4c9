use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::{join, softmax_rows, Linear, Params};
use crate::Real;

/// Multi-head scaled dot-product self-attention with separate Q/K/V/output
/// projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention<S: Real> {
    pub heads: usize,
    pub query: Linear<S>,
    pub key: Linear<S>,
    pub value: Linear<S>,
    pub output: Linear<S>,
}

#[derive(Clone, Debug)]
pub struct AttentionCache<S: Real> {
    x: Array2<S>,
    q: Array2<S>,
    k: Array2<S>,
    v: Array2<S>,
    /// Post-softmax attention, one `n × n` matrix per head.
    pub probs: Vec<Array2<S>>,
    context: Array2<S>,
}

impl<S: Real> MultiHeadAttention<S> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            heads,
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            output: Linear::new(dim, dim, rng),
        }
    }

    fn head_dim(&self) -> usize {
        self.query.output_dim() / self.heads
    }

    pub fn forward(&self, x: ArrayView2<S>) -> (Array2<S>, AttentionCache<S>) {
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let dh = self.head_dim();
        let scale = S::c(1.0 / (dh as f64).sqrt());
        let mut context = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut p = q.slice(cols).dot(&k.slice(cols).t());
            p.mapv_inplace(|z| z * scale);
            softmax_rows(&mut p);
            context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let out = self.output.forward(context.view());
        let cache = AttentionCache {
            x: x.to_owned(),
            q,
            k,
            v,
            probs,
            context,
        };
        (out, cache)
    }

    pub fn backward(&self, cache: &AttentionCache<S>, dy: ArrayView2<S>, grads: &mut Self) -> Array2<S> {
        let dcontext = self.output.backward(cache.context.view(), dy, &mut grads.output);
        let dh = self.head_dim();
        let scale = S::c(1.0 / (dh as f64).sqrt());
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx = dcontext.slice(cols);
            let dp = dctx.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx));
            // softmax backward: dS = P ⊙ (dP − rowsum(dP ⊙ P))
            let mut ds = dp;
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: S = drow.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum();
                for (d, &pp) in drow.iter_mut().zip(prow.iter()) {
                    *d = pp * (*d - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let x = cache.x.view();
        let mut dx = self.query.backward(x, dq.view(), &mut grads.query);
        dx += &self.key.backward(x, dk.view(), &mut grads.key);
        dx += &self.value.backward(x, dv.view(), &mut grads.value);
        dx
    }
}

impl<S: Real> Params<S> for MultiHeadAttention<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}
