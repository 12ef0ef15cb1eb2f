use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;

use crate::nn::{normal_init, Block, BlockCache, Grads, LayerNorm, LayerNormCache, Linear, ParamGroup, ParamStore, TensorId};
use crate::Real;

/// Patch-embedding transformer over single-channel depth images, with optional
/// deep prompt tokens.
///
/// Each sample is a sequence `[class, patch₁ … patchₘ]`. When prompts are
/// supplied, layer `i` sees `[class, P_i, patches]`; its outputs at the prompt
/// positions are dropped before layer `i+1` inserts its own fresh tokens.
/// Prompt tokens carry no positional embedding.
#[derive(Debug, Clone)]
pub struct VisionEncoder {
    pub image_size: usize,
    pub patch: usize,
    pub width: usize,
    pub patch_embed: Linear,
    pub class_token: TensorId,
    pub pos: TensorId,
    pub ln_pre: LayerNorm,
    pub blocks: Vec<Block>,
    pub ln_post: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct VisionCache<F> {
    batch: usize,
    patches: Array2<F>,
    ln_pre: LayerNormCache<F>,
    /// Per layer: block cache and the number of prompt tokens inserted.
    layers: Vec<(BlockCache<F>, usize)>,
    ln_post: LayerNormCache<F>,
}

impl<F> VisionCache<F> {
    /// Sequence length seen by each layer's attention.
    pub fn layer_lengths(&self) -> Vec<usize> {
        let seq = self.patches.nrows() / self.batch + 1;
        self.layers.iter().map(|(_, n)| seq + n).collect()
    }
}

impl VisionEncoder {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        image_size: usize,
        patch: usize,
        width: usize,
        layers: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let g = ParamGroup::Base2d;
        let n_patches = (image_size / patch).pow(2);
        let patch_embed = Linear::new(store, "vision.patch_embed", g, patch * patch, width, None, rng);
        let class_token = store.register("vision.class_token", g, normal_init(1, width, 0.02, rng));
        let pos = store.register("vision.pos", g, normal_init(n_patches + 1, width, 0.02, rng));
        let ln_pre = LayerNorm::new(store, "vision.ln_pre", g, width);
        let blocks = (0..layers)
            .map(|i| Block::new(store, &format!("vision.block.{i}"), g, width, heads, false, rng))
            .collect();
        let ln_post = LayerNorm::new(store, "vision.ln_post", g, width);
        Self {
            image_size,
            patch,
            width,
            patch_embed,
            class_token,
            pos,
            ln_pre,
            blocks,
            ln_post,
        }
    }

    pub fn n_patches(&self) -> usize {
        (self.image_size / self.patch).pow(2)
    }

    /// `[batch, H, W]` → `[batch·patches, patch²]`, patches in row-major order.
    fn patchify<F: Real>(&self, images: &Array3<F>) -> Array2<F> {
        let b = images.shape()[0];
        let p = self.patch;
        let side = self.image_size / p;
        let mut out = Array2::zeros((b * side * side, p * p));
        for i in 0..b {
            for pr in 0..side {
                for pc in 0..side {
                    let row = i * side * side + pr * side + pc;
                    let block = images.slice(s![i, pr * p..(pr + 1) * p, pc * p..(pc + 1) * p]);
                    for (k, v) in block.iter().enumerate() {
                        out[[row, k]] = *v;
                    }
                }
            }
        }
        out
    }

    /// Class-token features `[batch, width]`. `prompts` holds one `[n, width]`
    /// tensor id per layer.
    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        images: &Array3<F>,
        prompts: Option<&[TensorId]>,
    ) -> (Array2<F>, VisionCache<F>) {
        let batch = images.shape()[0];
        let np = self.n_patches();
        let seq = np + 1;
        let patches = self.patchify(images);
        let emb = self.patch_embed.forward(ps, patches.view());
        let cls = ps.value(self.class_token).row(0);
        let pos = ps.value(self.pos);
        let mut x = Array2::zeros((batch * seq, self.width));
        for b in 0..batch {
            let mut c = x.row_mut(b * seq);
            c.assign(&cls);
            c += &pos.row(0);
            let mut rest = x.slice_mut(s![b * seq + 1..(b + 1) * seq, ..]);
            rest.assign(&emb.slice(s![b * np..(b + 1) * np, ..]));
            rest += &pos.slice(s![1.., ..]);
        }
        let (mut x, ln_pre) = self.ln_pre.forward(ps, x.view());

        let mut layers = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let prompt = prompts.map(|p| ps.value(p[i]));
            let n = prompt.map_or(0, |p| p.nrows());
            let input = if n > 0 { insert_prompts(&x, prompt.expect("n > 0"), batch, seq) } else { x };
            let (y, cache) = block.forward(ps, input.view(), batch, seq + n);
            x = if n > 0 { strip_prompts(&y, n, batch, seq) } else { y };
            layers.push((cache, n));
        }

        let cls_rows = x.select(Axis(0), &(0..batch).map(|b| b * seq).collect::<Vec<_>>());
        let (feat, ln_post) = self.ln_post.forward(ps, cls_rows.view());
        (
            feat,
            VisionCache {
                batch,
                patches,
                ln_pre,
                layers,
                ln_post,
            },
        )
    }

    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &VisionCache<F>,
        d_feat: &Array2<F>,
        prompts: Option<&[TensorId]>,
        grads: &mut Grads<F>,
    ) {
        let batch = cache.batch;
        let np = self.n_patches();
        let seq = np + 1;
        let d_cls = self.ln_post.backward(ps, &cache.ln_post, d_feat.view(), grads);
        let mut d = Array2::zeros((batch * seq, self.width));
        for b in 0..batch {
            d.row_mut(b * seq).assign(&d_cls.row(b));
        }

        for (i, (block, (bc, n))) in self.blocks.iter().zip(&cache.layers).enumerate().rev() {
            let n = *n;
            if n == 0 {
                d = block.backward(ps, bc, d.view(), grads);
                continue;
            }
            let d_full = insert_prompts(&d, &Array2::zeros((n, self.width)), batch, seq);
            let dx = block.backward(ps, bc, d_full.view(), grads);
            let id = prompts.expect("prompt layer without prompt ids")[i];
            if let Some(gp) = grads.slot(id) {
                for b in 0..batch {
                    let start = b * (seq + n) + 1;
                    *gp += &dx.slice(s![start..start + n, ..]);
                }
            }
            d = strip_prompts(&dx, n, batch, seq);
        }

        let base_wanted = grads.wants(self.patch_embed.w)
            || grads.wants(self.class_token)
            || grads.wants(self.pos)
            || grads.wants(self.ln_pre.gamma);
        if !base_wanted {
            return;
        }
        let d = self.ln_pre.backward(ps, &cache.ln_pre, d.view(), grads);
        let mut d_emb = Array2::zeros((batch * np, self.width));
        for b in 0..batch {
            d_emb
                .slice_mut(s![b * np..(b + 1) * np, ..])
                .assign(&d.slice(s![b * seq + 1..(b + 1) * seq, ..]));
        }
        if let Some(gc) = grads.slot(self.class_token) {
            for b in 0..batch {
                let mut row = gc.row_mut(0);
                row += &d.row(b * seq);
            }
        }
        if let Some(gpos) = grads.slot(self.pos) {
            for b in 0..batch {
                *gpos += &d.slice(s![b * seq..(b + 1) * seq, ..]);
            }
        }
        self.patch_embed.backward_params(cache.patches.view(), d_emb.view(), grads);
    }
}

/// `[batch·seq, w]` → `[batch·(seq+n), w]` with `prompt` rows after each
/// sample's class token.
fn insert_prompts<F: Real>(x: &Array2<F>, prompt: &Array2<F>, batch: usize, seq: usize) -> Array2<F> {
    let n = prompt.nrows();
    let w = x.ncols();
    let t = seq + n;
    let mut out = Array2::zeros((batch * t, w));
    for b in 0..batch {
        out.row_mut(b * t).assign(&x.row(b * seq));
        out.slice_mut(s![b * t + 1..b * t + 1 + n, ..]).assign(prompt);
        out.slice_mut(s![b * t + 1 + n..(b + 1) * t, ..])
            .assign(&x.slice(s![b * seq + 1..(b + 1) * seq, ..]));
    }
    out
}

fn strip_prompts<F: Real>(y: &Array2<F>, n: usize, batch: usize, seq: usize) -> Array2<F> {
    let w = y.ncols();
    let t = seq + n;
    let mut out = Array2::zeros((batch * seq, w));
    for b in 0..batch {
        out.row_mut(b * seq).assign(&y.row(b * t));
        out.slice_mut(s![b * seq + 1..(b + 1) * seq, ..])
            .assign(&y.slice(s![b * t + 1 + n..(b + 1) * t, ..]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_then_strip_is_identity() {
        let x = Array2::from_shape_fn((6, 2), |(i, j)| (i * 2 + j) as f64);
        let p = Array2::from_elem((2, 2), -1.0);
        let full = insert_prompts(&x, &p, 2, 3);
        assert_eq!(full.nrows(), 10);
        assert_eq!(full.row(1), p.row(0));
        assert_eq!(full.row(5), x.row(3));
        assert_eq!(strip_prompts(&full, 2, 2, 3), x);
    }
}
