use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::attention::{AttentionCache, MultiHeadAttention};
use super::layers::{gelu, gelu_backward, LayerNorm, LayerNormCache, Linear};
use super::params::{Grads, ParamGroup, ParamStore};
use crate::Real;

/// Pre-norm residual block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))` with a
/// 4× GELU MLP.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    attn: AttentionCache<F>,
    ln2: LayerNormCache<F>,
    h2: Array2<F>,
    m1: Array2<F>,
    g: Array2<F>,
}

impl Block {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        group: ParamGroup,
        width: usize,
        heads: usize,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), group, width),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), group, width, heads, causal, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), group, width),
            fc1: Linear::new(store, &format!("{name}.fc1"), group, width, 4 * width, None, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), group, 4 * width, width, None, rng),
        }
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        x: ArrayView2<F>,
        batch: usize,
        seq: usize,
    ) -> (Array2<F>, BlockCache<F>) {
        let (h1, ln1) = self.ln1.forward(ps, x);
        let (a, attn) = self.attn.forward(ps, h1.view(), batch, seq);
        let x2 = &x + &a;
        let (h2, ln2) = self.ln2.forward(ps, x2.view());
        let m1 = self.fc1.forward(ps, h2.view());
        let g = gelu(&m1);
        let y = &x2 + &self.fc2.forward(ps, g.view());
        (
            y,
            BlockCache {
                ln1,
                attn,
                ln2,
                h2,
                m1,
                g,
            },
        )
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &BlockCache<F>,
        dy: ArrayView2<F>,
        grads: &mut Grads<F>,
    ) -> Array2<F> {
        let dg = self.fc2.backward(ps, cache.g.view(), dy, grads);
        let dm1 = gelu_backward(&cache.m1, dg.view());
        let dh2 = self.fc1.backward(ps, cache.h2.view(), dm1.view(), grads);
        let mut dx2 = dy.to_owned();
        dx2 += &self.ln2.backward(ps, &cache.ln2, dh2.view(), grads);
        let dh1 = self.attn.backward(ps, &cache.attn, dx2.view(), grads);
        let mut dx = dx2;
        dx += &self.ln1.backward(ps, &cache.ln1, dh1.view(), grads);
        dx
    }
}

/// A stack of blocks; used as-is by the text encoder. The vision encoder runs
/// its blocks one at a time to splice prompt tokens in between.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
pub struct TransformerCache<F> {
    blocks: Vec<BlockCache<F>>,
}

impl Transformer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        group: ParamGroup,
        layers: usize,
        width: usize,
        heads: usize,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            blocks: (0..layers)
                .map(|i| Block::new(store, &format!("{name}.{i}"), group, width, heads, causal, rng))
                .collect(),
        }
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        x: Array2<F>,
        batch: usize,
        seq: usize,
    ) -> (Array2<F>, TransformerCache<F>) {
        let mut h = x;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(ps, h.view(), batch, seq);
            caches.push(c);
            h = y;
        }
        (h, TransformerCache { blocks: caches })
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &TransformerCache<F>,
        dy: Array2<F>,
        grads: &mut Grads<F>,
    ) -> Array2<F> {
        let mut d = dy;
        for (block, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            d = block.backward(ps, c, d.view(), grads);
        }
        d
    }
}
