use ndarray::{Array2, Axis};
use rand::Rng;

use super::vocab::TokenSeq;
use crate::nn::{normal_init, Grads, LayerNorm, LayerNormCache, ParamGroup, ParamStore, TensorId, Transformer, TransformerCache};
use crate::Real;

/// Causal transformer over fixed-length token sequences. The feature of a
/// sequence is the final-layer hidden state at its EOS position.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub width: usize,
    pub len: usize,
    pub tok_emb: TensorId,
    pub pos: TensorId,
    pub blocks: Transformer,
    pub ln_final: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct TextCache<F> {
    tokens: Vec<u32>,
    eos: Vec<usize>,
    blocks: TransformerCache<F>,
    ln_final: LayerNormCache<F>,
}

impl TextEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        vocab_size: usize,
        len: usize,
        width: usize,
        layers: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        let g = ParamGroup::BaseText;
        let tok_emb = store.register("text.tok_emb", g, normal_init(vocab_size, width, 0.02, rng));
        let pos = store.register("text.pos", g, normal_init(len, width, 0.01, rng));
        let blocks = Transformer::new(store, "text.block", g, layers, width, heads, true, rng);
        let ln_final = LayerNorm::new(store, "text.ln_final", g, width);
        Self {
            width,
            len,
            tok_emb,
            pos,
            blocks,
            ln_final,
        }
    }

    pub fn forward<F: Real>(&self, ps: &ParamStore<F>, seqs: &[TokenSeq]) -> (Array2<F>, TextCache<F>) {
        let batch = seqs.len();
        let (l, w) = (self.len, self.width);
        let emb = ps.value(self.tok_emb);
        let pos = ps.value(self.pos);
        let mut x = Array2::zeros((batch * l, w));
        let mut tokens = Vec::with_capacity(batch * l);
        for (b, seq) in seqs.iter().enumerate() {
            assert_eq!(seq.indices.len(), l, "token sequence length");
            for (t, &tok) in seq.indices.iter().enumerate() {
                let mut row = x.row_mut(b * l + t);
                row.assign(&emb.row(tok as usize));
                row += &pos.row(t);
                tokens.push(tok);
            }
        }
        let (h, blocks) = self.blocks.forward(ps, x, batch, l);
        let eos: Vec<usize> = seqs.iter().enumerate().map(|(b, s)| b * l + s.eos_pos).collect();
        let picked = h.select(Axis(0), &eos);
        let (feat, ln_final) = self.ln_final.forward(ps, picked.view());
        (
            feat,
            TextCache {
                tokens,
                eos,
                blocks,
                ln_final,
            },
        )
    }

    pub fn backward<F: Real>(&self, ps: &ParamStore<F>, cache: &TextCache<F>, d_feat: &Array2<F>, grads: &mut Grads<F>) {
        if !grads.wants(self.tok_emb) {
            return;
        }
        let d_picked = self.ln_final.backward(ps, &cache.ln_final, d_feat.view(), grads);
        let mut d = Array2::zeros((cache.tokens.len(), self.width));
        for (i, &r) in cache.eos.iter().enumerate() {
            d.row_mut(r).assign(&d_picked.row(i));
        }
        let dx = self.blocks.backward(ps, &cache.blocks, d, grads);
        if let Some(g) = grads.slot(self.tok_emb) {
            for (r, &tok) in cache.tokens.iter().enumerate() {
                let mut row = g.row_mut(tok as usize);
                row += &dx.row(r);
            }
        }
        if let Some(g) = grads.slot(self.pos) {
            for chunk in dx.axis_chunks_iter(Axis(0), self.len) {
                *g += &chunk;
            }
        }
    }
}
