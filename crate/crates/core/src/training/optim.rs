use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::nn::{Grads, ParamGroup, ParamStore, TensorId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adaptive moments with decoupled weight decay.
    AdamW,
    /// Stochastic gradient descent with heavy-ball momentum.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adamw(5e-5, 0.05)
    }
}

impl OptimizerConfig {
    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            lr,
            min_lr: 1e-6,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.0,
        }
    }

    pub fn sgd(lr: f64, weight_decay: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            min_lr: 1e-6,
            weight_decay,
            momentum,
            ..Self::adamw(lr, weight_decay)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.min_lr >= 0.0
            && self.min_lr <= self.lr
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// Cosine decay from `lr` at step 0 to `min_lr` at `total`.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        let frac = if total == 0 { 0.0 } else { (step as f64 / total as f64).min(1.0) };
        self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + (PI * frac).cos())
    }
}

/// Optimizer over a fixed set of parameter groups. Moment buffers exist only
/// for tensors in those groups.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub groups: Vec<ParamGroup>,
    /// Number of updates applied so far.
    pub t: u64,
    buffers: BTreeMap<TensorId, Vec<Array2<f32>>>,
}

/// Serializable optimizer state keyed by tensor name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub groups: Vec<ParamGroup>,
    pub t: u64,
    pub buffers: Vec<(String, Vec<Array2<f32>>)>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, groups: &[ParamGroup], store: &ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        if let Some(g) = groups.iter().find(|g| store.is_frozen(**g)) {
            return Err(Error::Contract(format!("cannot optimize frozen group {g}")));
        }
        let n_buf = match config.kind {
            OptimizerKind::AdamW => 2,
            OptimizerKind::Sgd => 1,
        };
        let buffers = groups
            .iter()
            .flat_map(|&g| store.ids_in(g))
            .map(|id| (id, vec![Array2::zeros(store.value(id).raw_dim()); n_buf]))
            .collect();
        Ok(Self {
            config,
            groups: groups.to_vec(),
            t: 0,
            buffers,
        })
    }

    /// One update at learning rate `lr`. Touches only this optimizer's groups
    /// and refuses to run if any of them has been frozen since construction.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &Grads<f32>, lr: f64) -> Result<()> {
        if let Some(g) = self.groups.iter().find(|g| store.is_frozen(**g)) {
            return Err(Error::Contract(format!("group {g} is frozen")));
        }
        self.t += 1;
        let c = &self.config;
        let lr32 = lr as f32;
        let wd = c.weight_decay as f32;
        for (&id, bufs) in self.buffers.iter_mut() {
            let Some(g) = grads.get(id) else { continue };
            let p = store.value_mut(id);
            match c.kind {
                OptimizerKind::AdamW => {
                    let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
                    let bc1 = 1.0 - (c.beta1.powi(self.t as i32)) as f32;
                    let bc2 = 1.0 - (c.beta2.powi(self.t as i32)) as f32;
                    let eps = c.eps as f32;
                    let (m, rest) = bufs.split_at_mut(1);
                    Zip::from(p).and(&mut m[0]).and(&mut rest[0]).and(g).for_each(|p, m, v, &g| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *p -= lr32 * (mh / (vh.sqrt() + eps) + wd * *p);
                    });
                }
                OptimizerKind::Sgd => {
                    let mu = c.momentum as f32;
                    Zip::from(p).and(&mut bufs[0]).and(g).for_each(|p, v, &g| {
                        *v = mu * *v + g + wd * *p;
                        *p -= lr32 * *v;
                    });
                }
            }
        }
        Ok(())
    }

    pub fn state(&self, store: &ParamStore<f32>) -> OptimizerState {
        OptimizerState {
            config: self.config.clone(),
            groups: self.groups.clone(),
            t: self.t,
            buffers: self
                .buffers
                .iter()
                .map(|(&id, b)| (store.param(id).name.clone(), b.clone()))
                .collect(),
        }
    }

    pub fn restore(state: &OptimizerState, store: &ParamStore<f32>) -> Result<Self> {
        let mut opt = Self::new(state.config.clone(), &state.groups, store)?;
        opt.t = state.t;
        for (name, bufs) in &state.buffers {
            let id = store
                .find(name)
                .ok_or_else(|| Error::config(format!("optimizer state for unknown tensor `{name}`")))?;
            let slot = opt
                .buffers
                .get_mut(&id)
                .ok_or_else(|| Error::config(format!("tensor `{name}` is not optimized here")))?;
            if slot.len() != bufs.len() || slot.iter().zip(bufs).any(|(a, b)| a.dim() != b.dim()) {
                return Err(Error::config(format!("optimizer buffers for `{name}` have the wrong shape")));
            }
            *slot = bufs.clone();
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store() -> (ParamStore<f32>, TensorId, TensorId) {
        let mut s = ParamStore::new();
        let a = s.register("a", ParamGroup::Enc3d, array![[1.0f32, -2.0]]);
        let b = s.register("b", ParamGroup::Base2d, array![[3.0f32]]);
        (s, a, b)
    }

    #[test]
    fn cosine_endpoints() {
        let c = OptimizerConfig::sgd(2e-3, 1e-4, 0.9);
        assert_eq!(c.lr_at(0, 100), 2e-3);
        assert!((c.lr_at(100, 100) - 1e-6).abs() < 1e-15);
        assert!((c.lr_at(50, 100) - (1e-6 + 0.5 * (2e-3 - 1e-6))).abs() < 1e-15);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let (mut s, a, _) = store();
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.1, 0.0), &[ParamGroup::Enc3d], &s).unwrap();
        let mut g = Grads::new(&s, &[ParamGroup::Enc3d]);
        g.slot(a).unwrap().assign(&array![[0.5f32, -4.0]]);
        opt.step(&mut s, &g, 0.1).unwrap();
        // Bias-corrected first step is lr·sign(g) up to eps.
        let v = s.value(a);
        assert!((v[[0, 0]] - 0.9).abs() < 1e-6 && (v[[0, 1]] + 1.9).abs() < 1e-6, "{v}");
    }

    #[test]
    fn sgd_momentum_and_decay() {
        let (mut s, a, _) = store();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.5, 0.9), &[ParamGroup::Enc3d], &s).unwrap();
        let mut g = Grads::new(&s, &[ParamGroup::Enc3d]);
        g.slot(a).unwrap().fill(1.0);
        opt.step(&mut s, &g, 0.1).unwrap();
        // v = 1 + 0.5·1 = 1.5, p = 1 − 0.15
        assert!((s.value(a)[[0, 0]] - 0.85).abs() < 1e-6);
        opt.step(&mut s, &g, 0.1).unwrap();
        // v = 0.9·1.5 + 1 + 0.5·0.85 = 2.775
        assert!((s.value(a)[[0, 0]] - (0.85 - 0.2775)).abs() < 1e-6);
    }

    #[test]
    fn other_groups_untouched_and_frozen_refused() {
        let (mut s, _, b) = store();
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.1, 0.1), &[ParamGroup::Enc3d], &s).unwrap();
        let mut g = Grads::new(&s, &[ParamGroup::Enc3d, ParamGroup::Base2d]);
        g.slot(b).unwrap().fill(1.0);
        opt.step(&mut s, &g, 0.1).unwrap();
        assert_eq!(s.value(b)[[0, 0]], 3.0);
        s.freeze(ParamGroup::Base2d);
        assert!(Optimizer::new(OptimizerConfig::default(), &[ParamGroup::Base2d], &s).is_err());
        s.freeze(ParamGroup::Enc3d);
        assert!(matches!(opt.step(&mut s, &g, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn state_round_trip() {
        let (mut s, a, _) = store();
        let mut opt = Optimizer::new(OptimizerConfig::adamw(0.1, 0.0), &[ParamGroup::Enc3d], &s).unwrap();
        let mut g = Grads::new(&s, &[ParamGroup::Enc3d]);
        g.slot(a).unwrap().fill(0.3);
        opt.step(&mut s, &g, 0.1).unwrap();
        let st = opt.state(&s);
        let mut back = Optimizer::restore(&st, &s).unwrap();
        let mut s2 = s.clone();
        opt.step(&mut s, &g, 0.1).unwrap();
        back.step(&mut s2, &g, 0.1).unwrap();
        assert_eq!(s.value(a), s2.value(a));
    }
}
