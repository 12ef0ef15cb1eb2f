use std::collections::HashMap;

use ndarray::{Array1, Array2};

use super::bimodal::sample_batch;
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::log::LogRow;
use super::optim::Optimizer;
use crate::corpus::{Dataset, LoadMode};
use crate::encoders::{Cg3dModel, TokenSeq};
use crate::losses::{loss_3d_with_grad, loss_prompt_with_grad, positive_mask, Loss3dTerms};
use crate::nn::{Grads, ParamGroup};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

pub const OPT_3D: &str = "3d";
pub const OPT_PROMPT: &str = "prompt";
const GROUPS_3D: [ParamGroup; 2] = [ParamGroup::Enc3d, ParamGroup::Proj3d];
const EMBED_CHUNK: usize = 64;

/// Alternating CG3D optimization over a frozen image-text base.
///
/// Even global steps minimise the 3D loss over `{enc_3d, proj_3d}`; odd steps
/// minimise the image-text loss over the prompt tokens. Embeddings of the
/// frozen pathways are computed once, in a fixed order, so a resumed run sees
/// exactly the same numbers as an uninterrupted one.
#[derive(Debug, Clone)]
pub struct Cg3dTrainer {
    pub model: Cg3dModel<f32>,
    pub config: TrainConfig,
    pub seed: u64,
    pub step: u64,
    pub classes: Vec<String>,
    pub unseen: Vec<String>,
    opt_3d: Optimizer,
    opt_p: Optimizer,
    text_cache: HashMap<TokenSeq, Array1<f32>>,
    image_cache: HashMap<usize, Array1<f32>>,
}

impl Cg3dTrainer {
    /// Starts from a stage-0 checkpoint. The 3D encoder, its head and the
    /// prompts are freshly initialised from `seed`.
    pub fn new(base: &Checkpoint, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut model = base.model.clone();
        for g in ParamGroup::FROZEN_BASE {
            model.params.freeze(g);
        }
        let fresh = Cg3dModel::<f32>::new(model.config.clone(), model.vocab.clone(), seed)?;
        for g in [ParamGroup::Enc3d, ParamGroup::Proj3d, ParamGroup::Prompts] {
            for id in fresh.params.ids_in(g) {
                model.params.replace(id, fresh.params.value(id).clone());
            }
        }
        let opt_3d = Optimizer::new(config.optimizer_3d.clone(), &GROUPS_3D, &model.params)?;
        let opt_p = Optimizer::new(config.optimizer_prompt.clone(), &[ParamGroup::Prompts], &model.params)?;
        Ok(Self {
            model,
            config,
            seed,
            step: 0,
            classes: base.classes.clone(),
            unseen: Vec::new(),
            opt_3d,
            opt_p,
            text_cache: HashMap::new(),
            image_cache: HashMap::new(),
        })
    }

    /// Continues from a checkpoint written by [`Cg3dTrainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ckpt.model.clone();
        for g in ParamGroup::FROZEN_BASE {
            if !model.params.is_frozen(g) {
                return Err(Error::Contract(format!("checkpoint has trainable base group {g}")));
            }
        }
        let state = |n: &str| {
            ckpt.optimizer(n)
                .ok_or_else(|| Error::config(format!("checkpoint lacks `{n}` optimizer state")))
        };
        let opt_3d = Optimizer::restore(state(OPT_3D)?, &model.params)?;
        let opt_p = Optimizer::restore(state(OPT_PROMPT)?, &model.params)?;
        Ok(Self {
            model,
            config,
            seed: ckpt.seed,
            step: ckpt.step,
            classes: ckpt.classes.clone(),
            unseen: ckpt.unseen.clone(),
            opt_3d,
            opt_p,
            text_cache: HashMap::new(),
            image_cache: HashMap::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone(), self.classes.clone(), self.unseen.clone(), self.seed);
        ck.step = self.step;
        ck.optimizers = vec![
            (OPT_3D.into(), self.opt_3d.state(&self.model.params)),
            (OPT_PROMPT.into(), self.opt_p.state(&self.model.params)),
        ];
        ck.meta = serde_json::json!({ "stage": "cg3d", "train": self.config });
        ck
    }

    /// Fills the frozen-embedding caches for every record in `pool`.
    fn prepare(&mut self, data: &Dataset, pool: &[usize]) -> Result<()> {
        let mut seqs: Vec<TokenSeq> = pool.iter().map(|&i| data.tokens(i).clone()).collect();
        seqs.sort_by(|a, b| a.indices.cmp(&b.indices));
        seqs.dedup();
        seqs.retain(|s| !self.text_cache.contains_key(s));
        for chunk in seqs.chunks(EMBED_CHUNK) {
            let e = self.model.forward_texts(chunk)?.emb;
            for (s, row) in chunk.iter().zip(e.rows()) {
                self.text_cache.insert(s.clone(), row.to_owned());
            }
        }
        let ab = self.config.ablation;
        if ab.use_3d2d && !ab.use_prompts {
            let mut todo: Vec<usize> = pool.iter().copied().filter(|i| !self.image_cache.contains_key(i)).collect();
            todo.sort_unstable();
            todo.dedup();
            for chunk in todo.chunks(EMBED_CHUNK) {
                let imgs: Vec<_> = chunk.iter().map(|&i| data.image(i).clone()).collect();
                let e = self.model.embed_images(&imgs, false)?;
                for (&i, row) in chunk.iter().zip(e.rows()) {
                    self.image_cache.insert(i, row.to_owned());
                }
            }
        }
        Ok(())
    }

    fn gather(rows: impl Iterator<Item = Array1<f32>>, n: usize, d: usize) -> Array2<f32> {
        let mut out = Array2::zeros((n, d));
        for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
            dst.assign(&src);
        }
        out
    }

    /// Runs one global step on a batch drawn from `pool`.
    pub fn step(&mut self, data: &Dataset, pool: &[usize]) -> Result<LogRow> {
        self.prepare(data, pool)?;
        let s = self.step;
        let total = self.config.steps;
        let cfg = &self.config;
        let ab = cfg.ablation;
        let mut row = LogRow {
            step: s,
            loss_3d: None,
            loss_p: None,
            lr_3d: cfg.optimizer_3d.lr_at(s, total),
            lr_p: cfg.optimizer_prompt.lr_at(s, total),
        };
        let even = s % 2 == 0;
        if !even && !ab.use_prompts {
            self.step += 1;
            return Ok(row);
        }
        let idx = sample_batch(pool, cfg.batch_size, self.seed, s);
        let mode = if even { LoadMode::Train(cfg.augment.clone()) } else { LoadMode::Eval };
        let batch = data.batch(&idx, &mode, &mut stream(self.seed, Stream::Augment, s))?;
        let d = self.model.config.embed_dim;
        let n = batch.len();
        let ftext = Self::gather(batch.tokens.iter().map(|t| self.text_cache[t].clone()), n, d);
        let mask = positive_mask(&batch.labels, cfg.positive_mode);

        if even {
            let f2d = if !ab.use_3d2d {
                None
            } else if ab.use_prompts {
                Some(self.model.forward_images(&self.model.image_batch(&batch.images)?, true)?.emb)
            } else {
                Some(Self::gather(idx.iter().map(|i| self.image_cache[i].clone()), n, d))
            };
            let pp = self.model.forward_points(&self.model.point_batch(&batch.clouds)?, n)?;
            let terms = Loss3dTerms {
                with_image: ab.use_3d2d,
                with_text: ab.use_3dtext,
            };
            let f2d_view = f2d.as_ref().unwrap_or(&ftext).view();
            let l = loss_3d_with_grad(pp.emb.view(), f2d_view, ftext.view(), &mask, cfg.tau, terms)?;
            if !l.loss.is_finite() {
                return Err(Error::Divergence {
                    step: s,
                    loss: l.loss as f64,
                });
            }
            let mut grads = Grads::new(&self.model.params, &GROUPS_3D);
            self.model.backward_points(&pp, &l.d_3d, &mut grads);
            self.opt_3d.step(&mut self.model.params, &grads, row.lr_3d)?;
            row.loss_3d = Some(l.loss);
        } else {
            let ip = self.model.forward_images(&self.model.image_batch(&batch.images)?, true)?;
            let l = loss_prompt_with_grad(ip.emb.view(), ftext.view(), &mask, cfg.tau)?;
            if !l.loss.is_finite() {
                return Err(Error::Divergence {
                    step: s,
                    loss: l.loss as f64,
                });
            }
            let mut grads = Grads::new(&self.model.params, &[ParamGroup::Prompts]);
            self.model.backward_images(&ip, &l.d_a, &mut grads);
            self.opt_p.step(&mut self.model.params, &grads, row.lr_p)?;
            row.loss_p = Some(l.loss);
        }
        self.step += 1;
        Ok(row)
    }

    /// Steps until `self.step == until`, calling `on_checkpoint` after every
    /// `checkpoint_every` steps.
    pub fn run_until(
        &mut self,
        data: &Dataset,
        pool: &[usize],
        until: u64,
        mut on_checkpoint: impl FnMut(&Self) -> Result<()>,
    ) -> Result<Vec<LogRow>> {
        let mut log = Vec::new();
        while self.step < until {
            log.push(self.step(data, pool)?);
            let every = self.config.checkpoint_every;
            if every > 0 && self.step % every == 0 {
                on_checkpoint(self)?;
            }
        }
        Ok(log)
    }
}

/// Full CG3D pre-training on the seen-class training split of `data`.
pub fn pretrain_cg3d(
    data: &Dataset,
    base: &Checkpoint,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Checkpoint, Vec<LogRow>)> {
    let mut t = Cg3dTrainer::new(base, config.clone(), seed)?;
    t.unseen = data.manifest.header.unseen.clone();
    let pool = data.manifest.train_indices();
    if pool.is_empty() {
        return Err(Error::invalid("corpus has no training records"));
    }
    let log = t.run_until(data, &pool, config.steps, |_| Ok(()))?;
    Ok((t.checkpoint(), log))
}
