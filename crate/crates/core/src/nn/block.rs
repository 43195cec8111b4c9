use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{
    all_finite, dropout, dropout_backward, gelu, gelu_grad, join, AttentionCache, LayerNorm,
    LayerNormCache, Linear, MultiHeadAttention, Params,
};
use crate::{Real, Result, SimError};

#[derive(Clone, Debug)]
pub struct FeedForward<S: Real> {
    pub fc1: Linear<S>,
    pub fc2: Linear<S>,
}

#[derive(Clone, Debug)]
pub struct FeedForwardCache<S: Real> {
    x: Array2<S>,
    pre: Array2<S>,
    act: Array2<S>,
}

impl<S: Real> FeedForward<S> {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(dim, hidden, rng),
            fc2: Linear::new(hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: ArrayView2<S>) -> (Array2<S>, FeedForwardCache<S>) {
        let pre = self.fc1.forward(x);
        let act = pre.mapv(gelu);
        let y = self.fc2.forward(act.view());
        (
            y,
            FeedForwardCache {
                x: x.to_owned(),
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &FeedForwardCache<S>, dy: ArrayView2<S>, grads: &mut Self) -> Array2<S> {
        let dact = self.fc2.backward(cache.act.view(), dy, &mut grads.fc2);
        let dpre = dact * &cache.pre.mapv(gelu_grad);
        self.fc1.backward(cache.x.view(), dpre.view(), &mut grads.fc1)
    }
}

impl<S: Real> Params<S> for FeedForward<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Pre-norm transformer block:
/// `x + Drop(MHSA(LN(x)))`, then `x + Drop(FFN(LN(x)))`.
#[derive(Clone, Debug)]
pub struct Block<S: Real> {
    pub norm1: LayerNorm<S>,
    pub attn: MultiHeadAttention<S>,
    pub norm2: LayerNorm<S>,
    pub ffn: FeedForward<S>,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct BlockCache<S: Real> {
    norm1: LayerNormCache<S>,
    pub attn: AttentionCache<S>,
    mask1: Option<Array2<S>>,
    norm2: LayerNormCache<S>,
    ffn: FeedForwardCache<S>,
    mask2: Option<Array2<S>>,
}

impl<S: Real> Block<S> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, mlp: usize, dropout: f64, rng: &mut R) -> Self {
        Self {
            norm1: LayerNorm::new(dim),
            attn: MultiHeadAttention::new(dim, heads, rng),
            norm2: LayerNorm::new(dim),
            ffn: FeedForward::new(dim, mlp, rng),
            dropout,
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<S>,
        train: bool,
        rng: &mut R,
    ) -> (Array2<S>, BlockCache<S>) {
        let (n1, norm1) = self.norm1.forward(x);
        let (mut a, attn) = self.attn.forward(n1.view());
        let mask1 = dropout(&mut a, self.dropout, train, rng);
        let x1 = &x + &a;
        let (n2, norm2) = self.norm2.forward(x1.view());
        let (mut f, ffn) = self.ffn.forward(n2.view());
        let mask2 = dropout(&mut f, self.dropout, train, rng);
        let x2 = x1 + f;
        (
            x2,
            BlockCache {
                norm1,
                attn,
                mask1,
                norm2,
                ffn,
                mask2,
            },
        )
    }

    pub fn backward(&self, cache: &BlockCache<S>, dy: ArrayView2<S>, grads: &mut Self) -> Array2<S> {
        let df = dropout_backward(&dy.to_owned(), &cache.mask2);
        let dn2 = self.ffn.backward(&cache.ffn, df.view(), &mut grads.ffn);
        let dx1 = &dy + &self.norm2.backward(&cache.norm2, dn2.view(), &mut grads.norm2);
        let da = dropout_backward(&dx1, &cache.mask1);
        let dn1 = self.attn.backward(&cache.attn, da.view(), &mut grads.attn);
        dx1 + self.norm1.backward(&cache.norm1, dn1.view(), &mut grads.norm1)
    }
}

impl<S: Real> Params<S> for Block<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

/// A stack of [`Block`]s.
#[derive(Clone, Debug)]
pub struct TransformerStack<S: Real> {
    pub blocks: Vec<Block<S>>,
}

/// Saved activations of a [`TransformerStack`] forward pass.
#[derive(Clone, Debug, Default)]
pub struct StackCache<S: Real> {
    pub blocks: Vec<BlockCache<S>>,
}

impl<S: Real> StackCache<S> {
    /// Post-softmax attention of every layer and head.
    pub fn attention(&self) -> Vec<Vec<Array2<S>>> {
        self.blocks.iter().map(|b| b.attn.probs.clone()).collect()
    }
}

impl<S: Real> TransformerStack<S> {
    pub fn new<R: Rng + ?Sized>(
        layers: usize,
        dim: usize,
        heads: usize,
        mlp: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            blocks: (0..layers)
                .map(|_| Block::new(dim, heads, mlp, dropout, rng))
                .collect(),
        }
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<S>,
        train: bool,
        rng: &mut R,
    ) -> Result<(Array2<S>, StackCache<S>)> {
        let mut h = x.to_owned();
        let mut cache = StackCache {
            blocks: Vec::with_capacity(self.blocks.len()),
        };
        for (i, block) in self.blocks.iter().enumerate() {
            let (out, c) = block.forward(h.view(), train, rng);
            if !all_finite(&out) {
                return Err(SimError::Numeric {
                    layer: Some(i),
                    message: "non-finite activation".into(),
                });
            }
            h = out;
            cache.blocks.push(c);
        }
        Ok((h, cache))
    }

    pub fn backward(&self, cache: &StackCache<S>, dy: ArrayView2<S>, grads: &mut Self) -> Result<Array2<S>> {
        if cache.blocks.len() != self.blocks.len() {
            return Err(SimError::State(format!(
                "backward needs activations for {} layers, found {}",
                self.blocks.len(),
                cache.blocks.len()
            )));
        }
        let mut d = dy.to_owned();
        for ((block, c), g) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grads.blocks.iter_mut())
            .rev()
        {
            d = block.backward(c, d.view(), g);
        }
        Ok(d)
    }
}

impl<S: Real> Params<S> for TransformerStack<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Array2<S>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Array2<S>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
    }
}
