use rand::seq::index::sample;

use super::checkpoint::Checkpoint;
use super::config::BimodalConfig;
use super::optim::Optimizer;
use crate::corpus::{Dataset, LoadMode, Manifest, ZERO_SHOT_TEMPLATE};
use crate::encoders::{Cg3dModel, ModelConfig, Vocab};
use crate::losses::{pair_loss_with_grad, positive_mask};
use crate::nn::{Grads, ParamGroup};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

/// Vocabulary over all captions plus the zero-shot prompt for every class.
pub fn build_vocab(manifest: &Manifest) -> Vocab {
    let prompts: Vec<String> = manifest
        .classes()
        .iter()
        .map(|c| ZERO_SHOT_TEMPLATE.replace("{OBJECT}", c).to_lowercase())
        .collect();
    Vocab::build(
        manifest
            .records
            .iter()
            .map(|r| r.caption.as_str())
            .chain(prompts.iter().map(String::as_str)),
    )
}

/// The batch drawn at `step`: a uniform sample without replacement from
/// `pool`, from a stream that depends only on `(seed, step)`.
pub fn sample_batch(pool: &[usize], size: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut rng = stream(seed, Stream::Shuffle, step);
    let k = size.min(pool.len());
    sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BimodalRow {
    pub step: u64,
    pub loss: f32,
    pub lr: f64,
}

/// Trains the image and text towers and their heads with the symmetric
/// image-text loss on the training split, then freezes all four groups.
pub fn pretrain_bimodal(
    data: &Dataset,
    model_config: &ModelConfig,
    config: &BimodalConfig,
    seed: u64,
) -> Result<(Checkpoint, Vec<BimodalRow>)> {
    config.validate()?;
    let vocab = build_vocab(&data.manifest);
    let mut model = Cg3dModel::<f32>::new(model_config.clone(), vocab, seed)?;
    let groups = ParamGroup::FROZEN_BASE;
    let mut opt = Optimizer::new(config.optimizer.clone(), &groups, &model.params)?;
    let pool = data.manifest.train_indices();
    if pool.is_empty() {
        return Err(Error::invalid("stage-0 corpus has no training records"));
    }
    let mut log = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let idx = sample_batch(&pool, config.batch_size, seed, step);
        let batch = data.batch(&idx, &LoadMode::Eval, &mut stream(seed, Stream::Augment, step))?;
        let imgs = model.image_batch(&batch.images)?;
        let ip = model.forward_images(&imgs, false)?;
        let tp = model.forward_texts(&batch.tokens)?;
        let mask = positive_mask(&batch.labels, config.positive_mode);
        let pl = pair_loss_with_grad(ip.emb.view(), tp.emb.view(), &mask, config.tau)?;
        if !pl.loss.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: pl.loss as f64,
            });
        }
        let mut grads = Grads::new(&model.params, &groups);
        model.backward_images(&ip, &pl.d_a, &mut grads);
        model.backward_texts(&tp, &pl.d_b, &mut grads);
        let lr = config.optimizer.lr_at(step, config.steps);
        opt.step(&mut model.params, &grads, lr)?;
        log.push(BimodalRow { step, loss: pl.loss, lr });
    }
    for g in groups {
        model.params.freeze(g);
    }
    let mut ck = Checkpoint::new(model, data.manifest.classes().to_vec(), Vec::new(), seed);
    ck.step = config.steps;
    ck.meta = serde_json::json!({ "stage": "bimodal", "bimodal": config });
    Ok((ck, log))
}
