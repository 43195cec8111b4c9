//! Dense layers with explicit forward caches and backward passes.
//!
//! Every layer keeps its parameters as `Array2` fields and exposes them
//! through [`Params`]. A gradient buffer is simply a zeroed clone of the
//! module, so `backward(&self, cache, upstream, &mut grads)` accumulates into
//! a structure with exactly the same names and shapes as the parameters.

mod adamw;
pub mod gradcheck;
mod attention;
mod block;
mod linear;
mod norm;
mod ops;

pub use adamw::{cosine_lr, warmup_cosine_lr, AdamW};
pub use attention::{AttentionCache, MultiHeadAttention};
pub use block::{Block, BlockCache, FeedForward, FeedForwardCache, StackCache, TransformerStack};
pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache};
pub use ops::{dropout, dropout_backward, gelu, gelu_grad, softmax_rows};

use ndarray::Array2;

use crate::Real;

/// Named access to every trainable tensor of a module, in a fixed order.
pub trait Params<S: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn param_count<S: Real, P: Params<S> + ?Sized>(module: &P) -> usize {
    let mut n = 0;
    module.visit("", &mut |_, t| n += t.len());
    n
}

pub fn named_params<S: Real, P: Params<S> + ?Sized>(module: &P) -> Vec<(String, &Array2<S>)> {
    let mut out = Vec::new();
    module.visit("", &mut |name, t| out.push((name, t)));
    out
}

pub fn param_refs_mut<S: Real, P: Params<S> + ?Sized>(module: &mut P) -> Vec<&mut Array2<S>> {
    let mut out = Vec::new();
    module.visit_mut("", &mut |_, t| out.push(t));
    out
}

/// A clone of `module` with every parameter set to zero: the gradient buffer.
pub fn zeros_like<S: Real, P: Params<S> + Clone>(module: &P) -> P {
    let mut g = module.clone();
    g.visit_mut("", &mut |_, t| t.fill(S::zero()));
    g
}

/// `acc += other`, parameter by parameter.
pub fn accumulate<S: Real, P: Params<S>>(acc: &mut P, other: &P) {
    let src: Vec<&Array2<S>> = named_params(other).into_iter().map(|(_, t)| t).collect();
    let mut i = 0;
    acc.visit_mut("", &mut |_, t| {
        *t += src[i];
        i += 1;
    });
}

pub fn scale<S: Real, P: Params<S>>(module: &mut P, factor: S) {
    module.visit_mut("", &mut |_, t| t.mapv_inplace(|x| x * factor));
}

pub fn all_finite<S: Real>(a: &Array2<S>) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Casts a matrix between element types.
pub fn cast<A: Real, B: Real>(a: &Array2<A>) -> Array2<B> {
    a.mapv(|x| B::c(x.f64()))
}
