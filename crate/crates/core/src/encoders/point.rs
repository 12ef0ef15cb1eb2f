use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::nn::{relu_backward, relu_inplace, Grads, Linear, ParamGroup, ParamStore};
use crate::Real;

/// A point-set encoder: `[batch·n, 3]` coordinates in, `[batch, feature_dim]`
/// pre-projection features out. Implementations must be invariant to the order
/// of points within a cloud.
pub trait PointSetEncoder {
    type Cache<F: Real>;

    fn feature_dim(&self) -> usize;

    fn forward<F: Real>(&self, ps: &ParamStore<F>, points: ArrayView2<F>, batch: usize) -> (Array2<F>, Self::Cache<F>);

    fn backward<F: Real>(&self, ps: &ParamStore<F>, cache: &Self::Cache<F>, d_feat: ArrayView2<F>, grads: &mut Grads<F>);
}

/// Shared per-point MLP with ReLU, coordinate-wise max over points, then one
/// linear map.
#[derive(Debug, Clone)]
pub struct PointNetEncoder {
    pub mlp: Vec<Linear>,
    pub head: Linear,
}

#[derive(Debug, Clone)]
pub struct PointNetCache<F> {
    /// Input to each MLP layer followed by the final activations.
    acts: Vec<Array2<F>>,
    /// Row (within the flattened batch) that won the max for each output entry.
    argmax: Array2<usize>,
    pooled: Array2<F>,
}

impl PointNetEncoder {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        widths: &[usize],
        feature: usize,
        rng: &mut R,
    ) -> Self {
        let mut mlp = Vec::with_capacity(widths.len());
        let mut prev = 3;
        for (i, &w) in widths.iter().enumerate() {
            // He-style scale for ReLU layers.
            let std = (2.0 / prev as f64).sqrt();
            mlp.push(Linear::new(store, &format!("point.mlp.{i}"), ParamGroup::Enc3d, prev, w, Some(std), rng));
            prev = w;
        }
        let head = Linear::new(store, "point.head", ParamGroup::Enc3d, prev, feature, None, rng);
        Self { mlp, head }
    }
}

impl PointSetEncoder for PointNetEncoder {
    type Cache<F: Real> = PointNetCache<F>;

    fn feature_dim(&self) -> usize {
        self.head.out_dim
    }

    fn forward<F: Real>(&self, ps: &ParamStore<F>, points: ArrayView2<F>, batch: usize) -> (Array2<F>, PointNetCache<F>) {
        let n = points.nrows() / batch;
        debug_assert_eq!(n * batch, points.nrows());
        let mut acts = Vec::with_capacity(self.mlp.len() + 1);
        acts.push(points.to_owned());
        for layer in &self.mlp {
            let mut h = layer.forward(ps, acts.last().expect("input").view());
            relu_inplace(&mut h);
            acts.push(h);
        }
        let last = acts.last().expect("activations");
        let width = last.ncols();
        let mut pooled = Array2::zeros((batch, width));
        let mut argmax = Array2::zeros((batch, width));
        for b in 0..batch {
            for c in 0..width {
                let mut best = b * n;
                let mut v = last[[best, c]];
                for r in b * n + 1..(b + 1) * n {
                    // Strict comparison: ties go to the earliest point.
                    if last[[r, c]] > v {
                        v = last[[r, c]];
                        best = r;
                    }
                }
                pooled[[b, c]] = v;
                argmax[[b, c]] = best;
            }
        }
        let out = self.head.forward(ps, pooled.view());
        (out, PointNetCache { acts, argmax, pooled })
    }

    fn backward<F: Real>(&self, ps: &ParamStore<F>, cache: &PointNetCache<F>, d_feat: ArrayView2<F>, grads: &mut Grads<F>) {
        if !self.mlp.iter().chain([&self.head]).any(|l| grads.wants(l.w) || grads.wants(l.b)) {
            return;
        }
        let d_pooled = self.head.backward(ps, cache.pooled.view(), d_feat, grads);
        let last = cache.acts.last().expect("activations");
        let mut d = Array2::zeros(last.raw_dim());
        for ((b, c), &r) in cache.argmax.indexed_iter() {
            d[[r, c]] += d_pooled[[b, c]];
        }
        for (i, layer) in self.mlp.iter().enumerate().rev() {
            relu_backward(&cache.acts[i + 1], &mut d);
            if i == 0 {
                layer.backward_params(cache.acts[0].view(), d.view(), grads);
            } else {
                d = layer.backward(ps, cache.acts[i].view(), d.view(), grads);
            }
        }
    }
}
