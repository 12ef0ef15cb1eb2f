//! Single-file checkpoints.
//!
//! Layout, little-endian: `"CG3D"` | u32 version | u32 header length |
//! JSON header | f32 payload. The payload holds every parameter tensor in
//! header order, then every optimizer buffer in header order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::optim::{OptimizerConfig, OptimizerState};
use crate::encoders::{Cg3dModel, ModelConfig, Vocab};
use crate::nn::ParamGroup;
use crate::{Error, Result};

pub const CKPT_MAGIC: &[u8; 4] = b"CG3D";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Cg3dModel<f32>,
    /// Global training step reached.
    pub step: u64,
    pub seed: u64,
    pub classes: Vec<String>,
    pub unseen: Vec<String>,
    /// Named optimizer states for resuming.
    pub optimizers: Vec<(String, OptimizerState)>,
    /// Free-form run metadata (training configuration, provenance of stages).
    pub meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct BufferEntry {
    tensor: String,
    shape: [usize; 2],
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerEntry {
    name: String,
    config: OptimizerConfig,
    groups: Vec<ParamGroup>,
    t: u64,
    buffers: Vec<BufferEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    config_digest: String,
    step: u64,
    seed: u64,
    frozen: Vec<ParamGroup>,
    checksums: BTreeMap<ParamGroup, String>,
    vocab: Vocab,
    classes: Vec<String>,
    unseen: Vec<String>,
    tensors: Vec<TensorEntry>,
    optimizers: Vec<OptimizerEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: Cg3dModel<f32>, classes: Vec<String>, unseen: Vec<String>, seed: u64) -> Self {
        Self {
            model,
            step: 0,
            seed,
            classes,
            unseen,
            optimizers: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn checksums(&self) -> BTreeMap<ParamGroup, String> {
        self.model
            .params
            .groups()
            .into_iter()
            .map(|g| (g, self.model.params.checksum(g)))
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let ps = &self.model.params;
        let tensors: Vec<TensorEntry> = ps
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                group: p.group,
                shape: [p.value.nrows(), p.value.ncols()],
            })
            .collect();
        let optimizers = self
            .optimizers
            .iter()
            .map(|(name, st)| OptimizerEntry {
                name: name.clone(),
                config: st.config.clone(),
                groups: st.groups.clone(),
                t: st.t,
                buffers: st
                    .buffers
                    .iter()
                    .map(|(t, b)| BufferEntry {
                        tensor: t.clone(),
                        shape: b.first().map_or([0, 0], |a| [a.nrows(), a.ncols()]),
                        count: b.len(),
                    })
                    .collect(),
            })
            .collect();
        let header = Header {
            model: self.model.config.clone(),
            config_digest: self.model.config.digest(),
            step: self.step,
            seed: self.seed,
            frozen: ps.frozen_groups().iter().copied().collect(),
            checksums: self.checksums(),
            vocab: self.model.vocab.clone(),
            classes: self.classes.clone(),
            unseen: self.unseen.clone(),
            tensors,
            optimizers,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut push = |a: &Array2<f32>| {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, p) in ps.iter() {
            push(&p.value);
        }
        for (_, st) in &self.optimizers {
            for (_, bufs) in &st.buffers {
                for b in bufs {
                    push(b);
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::format(bytes.len(), "truncated checkpoint header"));
        }
        if &bytes[..4] != CKPT_MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CKPT_VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::format(bytes.len(), "truncated checkpoint header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::format(12, format!("header: {e}")))?;
        if header.model.digest() != header.config_digest {
            return Err(Error::format(12, "config digest does not match the model config"));
        }

        let mut reader = Payload {
            bytes,
            at: 12 + hlen,
        };
        let mut model = Cg3dModel::<f32>::new(header.model.clone(), header.vocab.clone(), 0)?;
        if model.params.len() != header.tensors.len() {
            return Err(Error::format(12, "tensor list does not match the model layout"));
        }
        for t in &header.tensors {
            let id = model
                .params
                .find(&t.name)
                .ok_or_else(|| Error::format(12, format!("unknown tensor `{}`", t.name)))?;
            let p = model.params.param(id);
            if p.group != t.group || p.value.dim() != (t.shape[0], t.shape[1]) {
                return Err(Error::format(12, format!("tensor `{}` has the wrong group or shape", t.name)));
            }
            let value = reader.array(t.shape)?;
            model.params.replace(id, value);
        }
        for &g in &header.frozen {
            model.params.freeze(g);
        }
        for (g, sum) in &header.checksums {
            if &model.params.checksum(*g) != sum {
                return Err(Error::format(12, format!("checksum mismatch for group {g}")));
            }
        }
        let mut optimizers = Vec::new();
        for o in &header.optimizers {
            let mut buffers = Vec::new();
            for b in &o.buffers {
                let bufs = (0..b.count).map(|_| reader.array(b.shape)).collect::<Result<Vec<_>>>()?;
                buffers.push((b.tensor.clone(), bufs));
            }
            optimizers.push((
                o.name.clone(),
                OptimizerState {
                    config: o.config.clone(),
                    groups: o.groups.clone(),
                    t: o.t,
                    buffers,
                },
            ));
        }
        if reader.at != bytes.len() {
            return Err(Error::format(reader.at, "trailing bytes after payload"));
        }
        Ok(Self {
            model,
            step: header.step,
            seed: header.seed,
            classes: header.classes,
            unseen: header.unseen,
            optimizers,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn optimizer(&self, name: &str) -> Option<&OptimizerState> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }
}

struct Payload<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Payload<'_> {
    fn array(&mut self, shape: [usize; 2]) -> Result<Array2<f32>> {
        let n = shape[0] * shape[1];
        let end = self.at + n * 4;
        let chunk = self
            .bytes
            .get(self.at..end)
            .ok_or_else(|| Error::format(self.bytes.len(), "truncated checkpoint payload"))?;
        let vals: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(self.at + i * 4, "non-finite value in checkpoint"));
        }
        self.at = end;
        Ok(Array2::from_shape_vec((shape[0], shape[1]), vals).expect("shape matches length"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Grads;
    use crate::training::optim::Optimizer;

    fn small() -> Cg3dModel<f32> {
        let cfg = ModelConfig {
            image_size: 16,
            layers: 2,
            width: 16,
            heads: 2,
            embed_dim: 8,
            text_len: 8,
            n_points: 16,
            point_widths: vec![8],
            point_feature: 8,
            ..ModelConfig::default()
        };
        Cg3dModel::new(cfg, Vocab::build(["this is a cube"]), 5).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = small();
        m.params.freeze(ParamGroup::Base2d);
        let mut opt = Optimizer::new(OptimizerConfig::adamw(1e-3, 0.05), &[ParamGroup::Enc3d], &m.params).unwrap();
        let mut g = Grads::new(&m.params, &[ParamGroup::Enc3d]);
        for id in m.params.ids_in(ParamGroup::Enc3d) {
            g.slot(id).unwrap().fill(0.1);
        }
        opt.step(&mut m.params, &g, 1e-3).unwrap();
        let mut ck = Checkpoint::new(m, vec!["cube".into()], vec![], 7);
        ck.step = 42;
        ck.optimizers.push(("3d".into(), opt.state(&ck.model.params)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.seed, 7);
        assert_eq!(back.checksums(), ck.checksums());
        assert!(back.model.params.is_frozen(ParamGroup::Base2d));
        assert_eq!(back.optimizers, ck.optimizers);
        assert_eq!(back.encode(), ck.encode());
        let texts = ["this is a cube"];
        assert_eq!(back.model.embed_texts(&texts).unwrap(), ck.model.embed_texts(&texts).unwrap());
    }

    #[test]
    fn corruption_detected() {
        let ck = Checkpoint::new(small(), vec![], vec![], 1);
        let mut bytes = ck.encode();
        let n = bytes.len();
        bytes[n - 1] ^= 0x01;
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Format { .. })));
        assert!(matches!(Checkpoint::decode(&bytes[..n - 3]), Err(Error::Format { .. })));
        assert!(matches!(Checkpoint::decode(b"NOPE00000000"), Err(Error::Format { offset: 0, .. })));
    }
}
