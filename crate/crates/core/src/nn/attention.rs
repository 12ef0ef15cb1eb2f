use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::layers::Linear;
use super::params::{Grads, ParamGroup, ParamStore};
use crate::Real;

/// Multi-head self-attention over a batch of equal-length sequences packed
/// row-wise as `[batch·seq, width]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub width: usize,
    pub causal: bool,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    x: Array2<F>,
    qkv: Array2<F>,
    /// Row-stochastic attention maps, one per (sample, head).
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
    batch: usize,
    seq: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        group: ParamGroup,
        width: usize,
        heads: usize,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        assert!(width % heads == 0, "width {width} not divisible by {heads} heads");
        let qkv = Linear::new(store, &format!("{name}.qkv"), group, width, 3 * width, None, rng);
        let out = Linear::new(store, &format!("{name}.out"), group, width, width, None, rng);
        Self {
            qkv,
            out,
            heads,
            width,
            causal,
        }
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        x: ArrayView2<F>,
        batch: usize,
        seq: usize,
    ) -> (Array2<F>, AttentionCache<F>) {
        debug_assert_eq!(x.nrows(), batch * seq);
        let d = self.width;
        let dh = d / self.heads;
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let qkv = self.qkv.forward(ps, x);
        let mut ctx = Array2::zeros((batch * seq, d));
        let mut probs = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            let rows = b * seq..(b + 1) * seq;
            for h in 0..self.heads {
                let c = h * dh..(h + 1) * dh;
                let q = qkv.slice(s![rows.clone(), c.clone()]);
                let k = qkv.slice(s![rows.clone(), d + c.start..d + c.end]);
                let v = qkv.slice(s![rows.clone(), 2 * d + c.start..2 * d + c.end]);
                let mut p = q.dot(&k.t());
                for (i, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
                    let limit = if self.causal { i + 1 } else { seq };
                    let mut max = F::neg_infinity();
                    for j in 0..limit {
                        row[j] *= scale;
                        max = max.max(row[j]);
                    }
                    let mut sum = F::zero();
                    for j in 0..limit {
                        let e = (row[j] - max).exp();
                        row[j] = e;
                        sum += e;
                    }
                    for j in 0..limit {
                        row[j] /= sum;
                    }
                    for j in limit..seq {
                        row[j] = F::zero();
                    }
                }
                ctx.slice_mut(s![rows.clone(), c]).assign(&p.dot(&v));
                probs.push(p);
            }
        }
        let y = self.out.forward(ps, ctx.view());
        (
            y,
            AttentionCache {
                x: x.to_owned(),
                qkv,
                probs,
                ctx,
                batch,
                seq,
            },
        )
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &AttentionCache<F>,
        dy: ArrayView2<F>,
        grads: &mut Grads<F>,
    ) -> Array2<F> {
        let d = self.width;
        let dh = d / self.heads;
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let seq = cache.seq;
        let dctx = self.out.backward(ps, cache.ctx.view(), dy, grads);
        let mut dqkv = Array2::zeros(cache.qkv.raw_dim());
        for b in 0..cache.batch {
            let rows = b * seq..(b + 1) * seq;
            for h in 0..self.heads {
                let c = h * dh..(h + 1) * dh;
                let qkv = &cache.qkv;
                let q = qkv.slice(s![rows.clone(), c.clone()]);
                let k = qkv.slice(s![rows.clone(), d + c.start..d + c.end]);
                let v = qkv.slice(s![rows.clone(), 2 * d + c.start..2 * d + c.end]);
                let p = &cache.probs[b * self.heads + h];
                let d_o = dctx.slice(s![rows.clone(), c.clone()]);

                let dv = p.t().dot(&d_o);
                let mut ds = d_o.dot(&v.t());
                for (mut drow, prow) in ds.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                    let dot: F = drow.iter().zip(prow.iter()).map(|(&a, &b)| a * b).sum();
                    for (dv, &pv) in drow.iter_mut().zip(prow.iter()) {
                        *dv = pv * (*dv - dot) * scale;
                    }
                }
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![rows.clone(), c.clone()]).assign(&dq);
                dqkv.slice_mut(s![rows.clone(), d + c.start..d + c.end]).assign(&dk);
                dqkv.slice_mut(s![rows.clone(), 2 * d + c.start..2 * d + c.end]).assign(&dv);
            }
        }
        self.qkv.backward(ps, cache.x.view(), dqkv.view(), grads)
    }
}
