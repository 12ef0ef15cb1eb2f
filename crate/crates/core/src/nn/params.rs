use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Real, Result};

/// Disjoint ownership groups for every learnable array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    #[serde(rename = "base_2d")]
    Base2d,
    #[serde(rename = "base_text")]
    BaseText,
    #[serde(rename = "proj_2d")]
    Proj2d,
    #[serde(rename = "proj_text")]
    ProjText,
    #[serde(rename = "enc_3d")]
    Enc3d,
    #[serde(rename = "proj_3d")]
    Proj3d,
    #[serde(rename = "prompts")]
    Prompts,
    /// Classification head attached during fine-tuning.
    #[serde(rename = "head")]
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Base2d,
        ParamGroup::BaseText,
        ParamGroup::Proj2d,
        ParamGroup::ProjText,
        ParamGroup::Enc3d,
        ParamGroup::Proj3d,
        ParamGroup::Prompts,
        ParamGroup::Head,
    ];

    /// Groups standing in for the pretrained image-text model.
    pub const FROZEN_BASE: [ParamGroup; 4] = [
        ParamGroup::Base2d,
        ParamGroup::BaseText,
        ParamGroup::Proj2d,
        ParamGroup::ProjText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Base2d => "base_2d",
            ParamGroup::BaseText => "base_text",
            ParamGroup::Proj2d => "proj_2d",
            ParamGroup::ProjText => "proj_text",
            ParamGroup::Enc3d => "enc_3d",
            ParamGroup::Proj3d => "proj_3d",
            ParamGroup::Prompts => "prompts",
            ParamGroup::Head => "head",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown parameter group `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<F>,
}

/// Named 2-D parameter arrays tagged with their group, plus the set of frozen
/// groups.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    frozen: BTreeSet<ParamGroup>,
}

impl<F> Default for ParamStore<F> {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            frozen: BTreeSet::new(),
        }
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor. Names are unique; registering a duplicate is a
    /// programming error.
    pub fn register(&mut self, name: impl Into<String>, group: ParamGroup, value: Array2<F>) -> TensorId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param { name, group, value });
        TensorId(self.params.len() - 1)
    }

    #[inline]
    pub fn value(&self, id: TensorId) -> &Array2<F> {
        &self.params[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: TensorId) -> &mut Array2<F> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: TensorId) -> &Param<F> {
        &self.params[id.0]
    }

    /// Replaces a tensor's value, possibly with a different shape.
    pub fn replace(&mut self, id: TensorId, value: Array2<F>) {
        self.params[id.0].value = value;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TensorId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (TensorId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.params.iter().position(|p| p.name == name).map(TensorId)
    }

    pub fn ids_in(&self, group: ParamGroup) -> Vec<TensorId> {
        self.iter().filter(|(_, p)| p.group == group).map(|(id, _)| id).collect()
    }

    pub fn numel(&self, group: ParamGroup) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.value.len()).sum()
    }

    pub fn groups(&self) -> BTreeSet<ParamGroup> {
        self.params.iter().map(|p| p.group).collect()
    }

    pub fn freeze(&mut self, group: ParamGroup) {
        self.frozen.insert(group);
    }

    pub fn unfreeze(&mut self, group: ParamGroup) {
        self.frozen.remove(&group);
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen.contains(&group)
    }

    pub fn frozen_groups(&self) -> &BTreeSet<ParamGroup> {
        &self.frozen
    }

    /// SHA-256 over names, shapes and the exact bit patterns of a group.
    pub fn checksum(&self, group: ParamGroup) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            h.update(p.name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.iter() {
                h.update(v.as_f64().to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Same parameters at another precision.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.mapv(|v| G::lit(v.as_f64())),
                })
                .collect(),
            frozen: self.frozen.clone(),
        }
    }

    /// Concatenated values of the given groups in registration order.
    pub fn flatten(&self, groups: &[ParamGroup]) -> Vec<F> {
        self.params
            .iter()
            .filter(|p| groups.contains(&p.group))
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn unflatten(&mut self, groups: &[ParamGroup], flat: &[F]) {
        let mut at = 0;
        for p in self.params.iter_mut().filter(|p| groups.contains(&p.group)) {
            for v in p.value.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        assert_eq!(at, flat.len(), "flat vector length mismatch");
    }
}

/// Gradient buffers for a chosen subset of groups.
#[derive(Debug, Clone)]
pub struct Grads<F> {
    slots: Vec<Option<Array2<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn new(store: &ParamStore<F>, groups: &[ParamGroup]) -> Self {
        Self {
            slots: store
                .params
                .iter()
                .map(|p| groups.contains(&p.group).then(|| Array2::zeros(p.value.raw_dim())))
                .collect(),
        }
    }

    #[inline]
    pub fn wants(&self, id: TensorId) -> bool {
        matches!(self.slots.get(id.0), Some(Some(_)))
    }

    #[inline]
    pub fn slot(&mut self, id: TensorId) -> Option<&mut Array2<F>> {
        self.slots.get_mut(id.0).and_then(|s| s.as_mut())
    }

    pub fn get(&self, id: TensorId) -> Option<&Array2<F>> {
        self.slots.get(id.0).and_then(|s| s.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (TensorId, &Array2<F>)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|a| (TensorId(i), a)))
    }

    /// Gradient values for the given groups in [`ParamStore::flatten`] order;
    /// groups without buffers contribute zeros.
    pub fn flatten(&self, store: &ParamStore<F>, groups: &[ParamGroup]) -> Vec<F> {
        let mut out = Vec::new();
        for (i, p) in store.params.iter().enumerate() {
            if !groups.contains(&p.group) {
                continue;
            }
            match &self.slots[i] {
                Some(g) => out.extend(g.iter().copied()),
                None => out.extend(std::iter::repeat_n(F::zero(), p.value.len())),
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

pub fn normal_init<F: Real, R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<F> {
    if std == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || F::lit(dist.sample(rng)))
}
