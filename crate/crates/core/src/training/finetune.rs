use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::bimodal::sample_batch;
use super::checkpoint::Checkpoint;
use super::config::FinetuneConfig;
use super::optim::Optimizer;
use crate::corpus::Dataset;
use crate::encoders::{Cg3dModel, PointSetEncoder};
use crate::geometry::{augment, PointCloud};
use crate::inference::argmax;
use crate::losses::cross_entropy_with_grad;
use crate::nn::{Grads, Linear, ParamGroup};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

const GROUPS: [ParamGroup; 2] = [ParamGroup::Enc3d, ParamGroup::Head];

/// Where the point encoder's weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneInit {
    Pretrained,
    Scratch,
}

/// The point encoder followed by a linear classification head.
#[derive(Debug, Clone)]
pub struct PointClassifier {
    pub model: Cg3dModel<f32>,
    pub head: Linear,
    pub classes: Vec<String>,
}

impl PointClassifier {
    /// Takes the encoder from `ckpt` (or re-initializes it from `seed`) and
    /// attaches a fresh head over `classes`.
    pub fn new(ckpt: &Checkpoint, classes: &[String], init: FinetuneInit, seed: u64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("classifier needs at least one class"));
        }
        let mut model = ckpt.model.clone();
        if init == FinetuneInit::Scratch {
            let fresh = Cg3dModel::<f32>::new(model.config.clone(), model.vocab.clone(), seed)?;
            for id in fresh.params.ids_in(ParamGroup::Enc3d) {
                model.params.replace(id, fresh.params.value(id).clone());
            }
        }
        for g in ParamGroup::ALL {
            model.params.freeze(g);
        }
        for g in GROUPS {
            model.params.unfreeze(g);
        }
        let feature = model.point.feature_dim();
        let head = Linear::new(
            &mut model.params,
            "head",
            ParamGroup::Head,
            feature,
            classes.len(),
            None,
            &mut stream(seed, Stream::Init, ParamGroup::Head as u64),
        );
        Ok(Self {
            model,
            head,
            classes: classes.to_vec(),
        })
    }

    pub fn label_index(&self, pc: &PointCloud) -> Result<usize> {
        let name = pc
            .label
            .as_deref()
            .ok_or_else(|| Error::invalid("fine-tuning cloud has no label"))?;
        self.classes.iter().position(|c| c == name).ok_or_else(|| Error::UnknownClass {
            name: name.to_string(),
            valid: self.classes.clone(),
        })
    }

    pub fn logits(&self, clouds: &[PointCloud]) -> Result<Array2<f32>> {
        let mut out = Array2::zeros((clouds.len(), self.classes.len()));
        for (k, chunk) in clouds.chunks(64).enumerate() {
            let x = self.model.point_batch(chunk)?;
            let (feat, _) = self.model.point.forward(&self.model.params, x.view(), chunk.len());
            let y = self.head.forward(&self.model.params, feat.view());
            out.slice_mut(ndarray::s![k * 64..k * 64 + chunk.len(), ..]).assign(&y);
        }
        Ok(out)
    }

    pub fn predict(&self, clouds: &[PointCloud]) -> Result<Vec<usize>> {
        let l = self.logits(clouds)?;
        Ok(l.rows()
            .into_iter()
            .map(|r| argmax(&r.iter().map(|&v| v as f64).collect::<Vec<_>>()))
            .collect())
    }

    /// Fraction of labelled clouds classified correctly.
    pub fn accuracy(&self, clouds: &[PointCloud]) -> Result<f64> {
        if clouds.is_empty() {
            return Err(Error::invalid("accuracy of an empty set"));
        }
        let truth = clouds.iter().map(|c| self.label_index(c)).collect::<Result<Vec<_>>>()?;
        let pred = self.predict(clouds)?;
        Ok(truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / clouds.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub classifier: PointClassifier,
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains encoder and head with cross-entropy on `train` (labels taken from
/// each cloud) and reports accuracy on `test`.
pub fn finetune(
    ckpt: &Checkpoint,
    classes: &[String],
    train: &[PointCloud],
    test: &[PointCloud],
    init: FinetuneInit,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    config.optimizer.validate()?;
    config.augment.validate()?;
    if train.is_empty() || test.is_empty() || config.batch_size == 0 {
        return Err(Error::invalid("fine-tuning needs training and test clouds and a positive batch size"));
    }
    let mut clf = PointClassifier::new(ckpt, classes, init, seed)?;
    let labels = train.iter().map(|c| clf.label_index(c)).collect::<Result<Vec<_>>>()?;
    for c in test {
        clf.label_index(c)?;
    }
    let mut opt = Optimizer::new(config.optimizer.clone(), &GROUPS, &clf.model.params)?;
    let pool: Vec<usize> = (0..train.len()).collect();
    let mut losses = Vec::with_capacity(config.steps as usize);
    for step in 0..config.steps {
        let idx = sample_batch(&pool, config.batch_size, seed, step);
        let mut rng = stream(seed, Stream::Augment, step);
        let clouds = idx
            .iter()
            .map(|&i| augment(&train[i], &config.augment, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let m = &clf.model;
        let x = m.point_batch(&clouds)?;
        let (feat, cache) = m.point.forward(&m.params, x.view(), clouds.len());
        let logits = clf.head.forward(&m.params, feat.view());
        let (loss, dlogits) = cross_entropy_with_grad(&logits, &y)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let mut grads = Grads::new(&m.params, &GROUPS);
        let dfeat = clf.head.backward(&m.params, feat.view(), dlogits.view(), &mut grads);
        m.point.backward(&m.params, &cache, dfeat.view(), &mut grads);
        let lr = config.optimizer.lr_at(step, config.steps);
        opt.step(&mut clf.model.params, &grads, lr)?;
        losses.push(loss);
    }
    let train_accuracy = clf.accuracy(train)?;
    let test_accuracy = clf.accuracy(test)?;
    Ok(FinetuneOutcome {
        classifier: clf,
        losses,
        train_accuracy,
        test_accuracy,
    })
}

/// Clouds of `indices` labelled with their manifest class.
pub fn labeled_clouds(data: &Dataset, indices: &[usize]) -> Vec<PointCloud> {
    let classes = data.manifest.classes();
    indices
        .iter()
        .map(|&i| data.cloud(i).clone().with_label(classes[data.label(i)].clone()))
        .collect()
}

/// A per-class random subset holding `fraction` of each class (at least one
/// record per class), in ascending index order.
pub fn stratified_subset(data: &Dataset, indices: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} not in (0, 1]")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(data.label(i)).or_default().push(i);
    }
    let mut out = Vec::new();
    for (c, mut members) in by_class {
        let k = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        members.shuffle(&mut stream(seed, Stream::Eval, c as u64));
        out.extend_from_slice(&members[..k]);
    }
    out.sort_unstable();
    Ok(out)
}
