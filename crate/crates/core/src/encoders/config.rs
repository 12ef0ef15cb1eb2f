use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Encoder sizes. Defaults are a toy-scale stand-in for a ViT-B image-text
/// model: 64×64 inputs, 8×8 patches, 4 layers of width 64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub image_size: usize,
    pub patch: usize,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub text_len: usize,
    pub n_prompt_tokens: usize,
    /// Points per cloud fed to the point-set encoder.
    pub n_points: usize,
    /// Widths of the shared per-point MLP.
    pub point_widths: Vec<usize>,
    pub point_feature: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            image_size: 64,
            patch: 8,
            layers: 4,
            heads: 4,
            width: 64,
            text_len: 16,
            n_prompt_tokens: 5,
            n_points: 256,
            point_widths: vec![64, 128, 256],
            point_feature: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return fail(format!("image_size {} not a multiple of patch {}", self.image_size, self.patch));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return fail(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if self.text_len < 2 {
            return fail(format!("text_len {} leaves no room for BOS and EOS", self.text_len));
        }
        if self.embed_dim == 0 || self.layers == 0 || self.point_feature == 0 || self.n_points == 0 {
            return fail("embed_dim, layers, point_feature and n_points must be positive".into());
        }
        if self.point_widths.is_empty() || self.point_widths.contains(&0) {
            return fail("point_widths must be a non-empty list of positive widths".into());
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        let side = self.image_size / self.patch;
        side * side
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
