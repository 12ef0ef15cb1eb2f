use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::point::{PointNetCache, PointNetEncoder, PointSetEncoder};
use super::projection::{ProjectionCache, ProjectionHead};
use super::text::{TextCache, TextEncoder};
use super::vision::{VisionCache, VisionEncoder};
use super::vocab::{tokenize, TokenSeq, Vocab};
use crate::geometry::{DepthImage, PointCloud};
use crate::nn::{Grads, ParamGroup, ParamStore, TensorId};
use crate::prompts::PromptSet;
use crate::rng::{stream, Stream};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "3d")]
    Point,
    #[serde(rename = "2d")]
    Image,
    #[serde(rename = "text")]
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Point => "3d",
            Modality::Image => "2d",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3d" | "point" => Ok(Modality::Point),
            "2d" | "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            _ => Err(Error::invalid(format!("unknown modality `{s}`"))),
        }
    }
}

/// Forward results kept for a backward pass: unit-norm embeddings plus caches.
#[derive(Debug, Clone)]
pub struct PointPass<F> {
    pub emb: Array2<F>,
    feat: PointNetCache<F>,
    proj: ProjectionCache<F>,
}

#[derive(Debug, Clone)]
pub struct ImagePass<F> {
    pub emb: Array2<F>,
    prompted: bool,
    feat: VisionCache<F>,
    proj: ProjectionCache<F>,
}

#[derive(Debug, Clone)]
pub struct TextPass<F> {
    pub emb: Array2<F>,
    feat: TextCache<F>,
    proj: ProjectionCache<F>,
}

/// The three encoders, their projection heads, and the prompt tokens, all
/// sharing one parameter store.
#[derive(Debug, Clone)]
pub struct Cg3dModel<F> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore<F>,
    pub point: PointNetEncoder,
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    pub proj_3d: ProjectionHead,
    pub proj_2d: ProjectionHead,
    pub proj_text: ProjectionHead,
    /// One `[n, width]` tensor per vision layer; `n = 0` disables prompting.
    pub prompts: Vec<TensorId>,
}

impl<F: Real> Cg3dModel<F> {
    /// Fresh model. Each group draws from its own stream so changing one
    /// encoder's size leaves the others' initial weights untouched.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        vocab.validate()?;
        let c = &config;
        let mut ps = ParamStore::new();
        let init = |g: ParamGroup| stream(seed, Stream::Init, g as u64);
        let vision = VisionEncoder::new(&mut ps, c.image_size, c.patch, c.width, c.layers, c.heads, &mut init(ParamGroup::Base2d));
        let text = TextEncoder::new(&mut ps, vocab.len(), c.text_len, c.width, c.layers, c.heads, &mut init(ParamGroup::BaseText));
        let proj_2d = ProjectionHead::new(&mut ps, "proj_2d", ParamGroup::Proj2d, c.width, c.embed_dim, &mut init(ParamGroup::Proj2d));
        let proj_text = ProjectionHead::new(&mut ps, "proj_text", ParamGroup::ProjText, c.width, c.embed_dim, &mut init(ParamGroup::ProjText));
        let point = PointNetEncoder::new(&mut ps, &c.point_widths, c.point_feature, &mut init(ParamGroup::Enc3d));
        let proj_3d = ProjectionHead::new(&mut ps, "proj_3d", ParamGroup::Proj3d, c.point_feature, c.embed_dim, &mut init(ParamGroup::Proj3d));
        let mut prompt_rng = init(ParamGroup::Prompts);
        let set = PromptSet::init(c.layers, c.n_prompt_tokens, c.width, &mut prompt_rng);
        let prompts = set
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| ps.register(format!("prompts.layer{i}"), ParamGroup::Prompts, t.mapv(|v| F::lit(v as f64))))
            .collect();
        Ok(Self {
            config,
            vocab,
            params: ps,
            point,
            vision,
            text,
            proj_3d,
            proj_2d,
            proj_text,
            prompts,
        })
    }

    /// Same model at another precision.
    pub fn cast<G: Real>(&self) -> Cg3dModel<G> {
        Cg3dModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            point: self.point.clone(),
            vision: self.vision.clone(),
            text: self.text.clone(),
            proj_3d: self.proj_3d.clone(),
            proj_2d: self.proj_2d.clone(),
            proj_text: self.proj_text.clone(),
            prompts: self.prompts.clone(),
        }
    }

    pub fn n_prompt_tokens(&self) -> usize {
        self.prompts.first().map_or(0, |&id| self.params.value(id).nrows())
    }

    pub fn prompt_set(&self) -> PromptSet {
        PromptSet {
            n: self.n_prompt_tokens(),
            width: self.config.width,
            tokens: self
                .prompts
                .iter()
                .map(|&id| self.params.value(id).mapv(|v| v.as_f64() as f32))
                .collect(),
        }
    }

    /// Replaces the prompt tokens; the set must match the vision encoder's
    /// depth and width.
    pub fn install_prompts(&mut self, set: &PromptSet) -> Result<()> {
        set.check_fits(self.config.layers, self.config.width)?;
        for (&id, t) in self.prompts.iter().zip(&set.tokens) {
            self.params.replace(id, t.mapv(|v| F::lit(v as f64)));
        }
        self.config.n_prompt_tokens = set.n;
        Ok(())
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        tokenize(text, &self.vocab, self.config.text_len)
    }

    /// `[batch·n_points, 3]` coordinates (each cloud resampled to `n_points`).
    pub fn point_batch(&self, clouds: &[PointCloud]) -> Result<Array2<F>> {
        let n = self.config.n_points;
        let mut out = Array2::zeros((clouds.len() * n, 3));
        for (b, pc) in clouds.iter().enumerate() {
            if pc.is_empty() {
                return Err(Error::invalid("cannot encode an empty point cloud"));
            }
            for (i, p) in pc.resampled(n).points.iter().enumerate() {
                for k in 0..3 {
                    out[[b * n + i, k]] = F::lit(p[k] as f64);
                }
            }
        }
        Ok(out)
    }

    pub fn image_batch(&self, images: &[DepthImage]) -> Result<Array3<F>> {
        let s = self.config.image_size;
        let mut out = Array3::zeros((images.len(), s, s));
        for (b, img) in images.iter().enumerate() {
            if img.height != s || img.width != s {
                return Err(Error::config(format!(
                    "image is {}x{}, encoder expects {s}x{s}",
                    img.height, img.width
                )));
            }
            for (k, &v) in img.pixels.iter().enumerate() {
                out[[b, k / s, k % s]] = F::lit(v as f64);
            }
        }
        Ok(out)
    }

    pub fn forward_points(&self, points: &Array2<F>, batch: usize) -> Result<PointPass<F>> {
        let (feat, fc) = self.point.forward(&self.params, points.view(), batch);
        let (emb, pc) = self.proj_3d.forward(&self.params, feat.view())?;
        Ok(PointPass { emb, feat: fc, proj: pc })
    }

    /// With `use_prompts` and a non-empty prompt set, runs the prompted pathway.
    pub fn forward_images(&self, images: &Array3<F>, use_prompts: bool) -> Result<ImagePass<F>> {
        let prompted = use_prompts && self.n_prompt_tokens() > 0;
        let ids = prompted.then_some(self.prompts.as_slice());
        let (feat, fc) = self.vision.forward(&self.params, images, ids);
        let (emb, pc) = self.proj_2d.forward(&self.params, feat.view())?;
        Ok(ImagePass {
            emb,
            prompted,
            feat: fc,
            proj: pc,
        })
    }

    pub fn forward_texts(&self, seqs: &[TokenSeq]) -> Result<TextPass<F>> {
        let (feat, fc) = self.text.forward(&self.params, seqs);
        let (emb, pc) = self.proj_text.forward(&self.params, feat.view())?;
        Ok(TextPass { emb, feat: fc, proj: pc })
    }

    pub fn backward_points(&self, pass: &PointPass<F>, d_emb: &Array2<F>, grads: &mut Grads<F>) {
        let d = self.proj_3d.backward(&self.params, &pass.proj, d_emb, grads);
        self.point.backward(&self.params, &pass.feat, d.view(), grads);
    }

    pub fn backward_images(&self, pass: &ImagePass<F>, d_emb: &Array2<F>, grads: &mut Grads<F>) {
        let d = self.proj_2d.backward(&self.params, &pass.proj, d_emb, grads);
        let ids = pass.prompted.then_some(self.prompts.as_slice());
        self.vision.backward(&self.params, &pass.feat, &d, ids, grads);
    }

    pub fn backward_texts(&self, pass: &TextPass<F>, d_emb: &Array2<F>, grads: &mut Grads<F>) {
        let d = self.proj_text.backward(&self.params, &pass.proj, d_emb, grads);
        self.text.backward(&self.params, &pass.feat, &d, grads);
    }

    /// Unit-norm 3D embeddings, encoded in chunks.
    pub fn embed_clouds(&self, clouds: &[PointCloud]) -> Result<Array2<F>> {
        self.chunked(clouds, |m, c| Ok(m.forward_points(&m.point_batch(c)?, c.len())?.emb))
    }

    pub fn embed_images(&self, images: &[DepthImage], use_prompts: bool) -> Result<Array2<F>> {
        self.chunked(images, |m, c| Ok(m.forward_images(&m.image_batch(c)?, use_prompts)?.emb))
    }

    pub fn embed_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Array2<F>> {
        let seqs: Vec<TokenSeq> = texts.iter().map(|t| self.tokenize(t.as_ref())).collect();
        self.chunked(&seqs, |m, c| Ok(m.forward_texts(c)?.emb))
    }

    fn chunked<T>(&self, items: &[T], f: impl Fn(&Self, &[T]) -> Result<Array2<F>>) -> Result<Array2<F>> {
        const CHUNK: usize = 64;
        let mut out = Array2::zeros((items.len(), self.config.embed_dim));
        for (i, c) in items.chunks(CHUNK).enumerate() {
            let e = f(self, c)?;
            out.slice_mut(ndarray::s![i * CHUNK..i * CHUNK + c.len(), ..]).assign(&e);
        }
        Ok(out)
    }
}
