//! Deep visual prompt tokens.
//!
//! File layout, little-endian: `"VPT1"` | u32 layers | u32 n | u32 width |
//! layers·n·width f32, layer-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::nn::normal_init;
use crate::{Error, Result};

pub const VPT_MAGIC: &[u8; 4] = b"VPT1";
pub const PROMPT_INIT_STD: f64 = 0.02;

/// `n` learnable tokens of width `width` for each of `layers` encoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub n: usize,
    pub width: usize,
    pub tokens: Vec<Array2<f32>>,
}

impl PromptSet {
    /// `n = 0` yields an empty set, which disables prompting.
    pub fn init<R: Rng + ?Sized>(layers: usize, n: usize, width: usize, rng: &mut R) -> Self {
        Self {
            n,
            width,
            tokens: (0..layers).map(|_| normal_init(n, width, PROMPT_INIT_STD, rng)).collect(),
        }
    }

    pub fn empty(layers: usize, width: usize) -> Self {
        Self {
            n: 0,
            width,
            tokens: vec![Array2::zeros((0, width)); layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tokens.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Checks shape against an encoder of `layers` layers and width `width`.
    pub fn check_fits(&self, layers: usize, width: usize) -> Result<()> {
        if self.layers() != layers || self.width != width {
            return Err(Error::config(format!(
                "prompt set is {} layers × width {}, encoder is {layers} layers × width {width}",
                self.layers(),
                self.width
            )));
        }
        if self.tokens.iter().any(|t| t.dim() != (self.n, self.width)) {
            return Err(Error::config("prompt token count varies across layers"));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.layers() * self.n * self.width * 4);
        out.extend_from_slice(VPT_MAGIC);
        for v in [self.layers(), self.n, self.width] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for t in &self.tokens {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format(bytes.len(), "truncated prompt header"));
        }
        if &bytes[..4] != VPT_MAGIC {
            return Err(Error::format(0, "bad prompt magic"));
        }
        let u = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
        let (layers, n, width) = (u(4), u(8), u(12));
        let count = layers
            .checked_mul(n)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::format(4, "prompt shape overflows"))?;
        let need = 16 + count * 4;
        if bytes.len() != need {
            return Err(Error::format(
                bytes.len().min(need),
                format!("prompt payload should be {need} bytes, file has {}", bytes.len()),
            ));
        }
        let mut tokens = Vec::with_capacity(layers);
        for l in 0..layers {
            let mut t = Array2::zeros((n, width));
            for (k, v) in t.iter_mut().enumerate() {
                let off = 16 + (l * n * width + k) * 4;
                let x = f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"));
                if !x.is_finite() {
                    return Err(Error::format(off, "non-finite prompt value"));
                }
                *v = x;
            }
            tokens.push(t);
        }
        Ok(Self { n, width, tokens })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
