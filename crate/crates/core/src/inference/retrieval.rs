use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use super::export::embed_records;
use crate::corpus::Dataset;
use crate::encoders::{Cg3dModel, Modality};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalHit {
    pub id: String,
    pub class: String,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
}

/// Unit-norm database embeddings of one modality, keyed by record id.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pub modality: Modality,
    pub ids: Vec<String>,
    pub classes: Vec<String>,
    pub embeddings: Array2<f32>,
}

impl RetrievalIndex {
    pub fn new(modality: Modality, ids: Vec<String>, classes: Vec<String>, embeddings: Array2<f32>) -> Result<Self> {
        if ids.len() != embeddings.nrows() || classes.len() != ids.len() {
            return Err(Error::invalid("ids, classes and embeddings differ in length"));
        }
        Ok(Self {
            modality,
            ids,
            classes,
            embeddings,
        })
    }

    /// Index over `indices` of a dataset; images use the prompted pathway.
    pub fn from_dataset(data: &Dataset, indices: &[usize], model: &Cg3dModel<f32>, modality: Modality) -> Result<Self> {
        let e = embed_records(data, indices, model, modality, true)?;
        let ids = indices.iter().map(|&i| data.id(i).to_string()).collect();
        let classes = indices
            .iter()
            .map(|&i| data.manifest.classes()[data.label(i)].clone())
            .collect();
        Self::new(modality, ids, classes, e)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Top `topk` hits by inner product, ties broken by ascending id. `topk`
    /// larger than the database is truncated.
    pub fn query(&self, q: ArrayView1<f32>, topk: usize) -> Result<Vec<RetrievalHit>> {
        if topk == 0 {
            return Err(Error::invalid("topk must be at least 1"));
        }
        if q.len() != self.embeddings.ncols() {
            return Err(Error::invalid(format!(
                "query width {} differs from index width {}",
                q.len(),
                self.embeddings.ncols()
            )));
        }
        let sims = self.embeddings.dot(&q);
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            sims[b]
                .partial_cmp(&sims[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        Ok(order
            .into_iter()
            .take(topk)
            .enumerate()
            .map(|(r, i)| RetrievalHit {
                id: self.ids[i].clone(),
                class: self.classes[i].clone(),
                similarity: sims[i] as f64,
                rank: r + 1,
            })
            .collect())
    }
}
