use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1};

use super::metrics::{argmax, softmax};
use crate::corpus::CaptionTemplate;
use crate::encoders::Cg3dModel;
use crate::geometry::PointCloud;
use crate::{Error, Result};

/// Unit-norm text embeddings of one prompt per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassBank {
    pub classes: Vec<String>,
    pub template: String,
    /// One row per class.
    pub matrix: Array2<f32>,
}

pub fn build_text_bank(classes: &[String], template: &str, model: &Cg3dModel<f32>) -> Result<TextClassBank> {
    if classes.is_empty() {
        return Err(Error::invalid("class list is empty"));
    }
    let unique: BTreeSet<&String> = classes.iter().collect();
    if unique.len() != classes.len() {
        return Err(Error::invalid("class list has duplicates"));
    }
    let t = CaptionTemplate::new(template)?;
    let prompts: Vec<String> = classes.iter().map(|c| t.render(c)).collect();
    Ok(TextClassBank {
        classes: classes.to_vec(),
        template: template.to_string(),
        matrix: model.embed_texts(&prompts)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShot {
    pub index: usize,
    pub label: String,
    /// Softmax over classes of the inner products, temperature 1.
    pub scores: Vec<f64>,
}

/// Scores one unit-norm 3D embedding against the bank.
pub fn zero_shot_scores(f3d: ArrayView1<f32>, bank: &TextClassBank) -> ZeroShot {
    let sims: Vec<f64> = bank.matrix.rows().into_iter().map(|r| r.dot(&f3d) as f64).collect();
    let index = argmax(&sims);
    ZeroShot {
        index,
        label: bank.classes[index].clone(),
        scores: softmax(&sims),
    }
}

pub fn zero_shot_classify(pc: &PointCloud, bank: &TextClassBank, model: &Cg3dModel<f32>) -> Result<ZeroShot> {
    let e = model.embed_clouds(std::slice::from_ref(pc))?;
    Ok(zero_shot_scores(e.row(0), bank))
}

/// Fraction of clouds whose prediction equals their label.
pub fn zero_shot_accuracy(
    clouds: &[PointCloud],
    labels: &[String],
    bank: &TextClassBank,
    model: &Cg3dModel<f32>,
) -> Result<f64> {
    if clouds.is_empty() || clouds.len() != labels.len() {
        return Err(Error::invalid("need one label per cloud and at least one cloud"));
    }
    let e = model.embed_clouds(clouds)?;
    let hits = e
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(r, l)| zero_shot_scores(r.view(), bank).label == **l)
        .count();
    Ok(hits as f64 / clouds.len() as f64)
}
