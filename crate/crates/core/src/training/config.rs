use serde::{Deserialize, Serialize};

use super::optim::OptimizerConfig;
use crate::corpus::CorpusSpec;
use crate::encoders::ModelConfig;
use crate::geometry::AugmentConfig;
use crate::losses::{PositiveMode, DEFAULT_TAU};
use crate::{Error, Result};

/// Which loss terms and which pathway are active in CG3D pre-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub use_3d2d: bool,
    pub use_3dtext: bool,
    pub use_prompts: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_3d2d: true,
            use_3dtext: true,
            use_prompts: true,
        }
    }
}

impl Ablation {
    pub const IMAGE_ONLY: Ablation = Ablation {
        use_3d2d: true,
        use_3dtext: false,
        use_prompts: false,
    };
    pub const BOTH: Ablation = Ablation {
        use_3d2d: true,
        use_3dtext: true,
        use_prompts: false,
    };
    pub const FULL: Ablation = Ablation {
        use_3d2d: true,
        use_3dtext: true,
        use_prompts: true,
    };
}

/// CG3D pre-training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub tau: f64,
    pub positive_mode: PositiveMode,
    pub optimizer_3d: OptimizerConfig,
    pub optimizer_prompt: OptimizerConfig,
    pub ablation: Ablation,
    pub augment: AugmentConfig,
    /// Save a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 2000,
            tau: DEFAULT_TAU,
            positive_mode: PositiveMode::Class,
            optimizer_3d: OptimizerConfig::adamw(5e-5, 0.05),
            optimizer_prompt: OptimizerConfig::sgd(2e-3, 1e-4, 0.9),
            ablation: Ablation::default(),
            augment: AugmentConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.ablation.use_3d2d && !self.ablation.use_3dtext {
            return Err(Error::config("at least one of use_3d2d and use_3dtext must be enabled"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        self.optimizer_3d.validate()?;
        self.optimizer_prompt.validate()?;
        self.augment.validate()
    }
}

/// Stage-0 image-text pre-training of the base encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BimodalConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub tau: f64,
    pub positive_mode: PositiveMode,
    pub optimizer: OptimizerConfig,
}

impl Default for BimodalConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 1000,
            tau: DEFAULT_TAU,
            positive_mode: PositiveMode::Class,
            optimizer: OptimizerConfig::adamw(1e-3, 0.01),
        }
    }
}

impl BimodalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.tau > 0.0) {
            return Err(Error::config("batch_size and tau must be positive"));
        }
        self.optimizer.validate()
    }
}

/// Supervised fine-tuning of the point encoder with a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 300,
            optimizer: OptimizerConfig::adamw(1e-3, 0.05),
            augment: AugmentConfig::default(),
        }
    }
}

/// Multinomial logistic regression on frozen features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iter: 5000,
            tol: 1e-5,
        }
    }
}

/// Everything a command-line run needs, one section per stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub corpus: CorpusSpec,
    pub bimodal: BimodalConfig,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub probe: ProbeConfig,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.corpus.validate()?;
        self.bimodal.validate()?;
        self.train.validate()?;
        self.finetune.optimizer.validate()?;
        if self.corpus.image_size != self.model.image_size {
            return Err(Error::config(format!(
                "corpus image_size {} differs from model image_size {}",
                self.corpus.image_size, self.model.image_size
            )));
        }
        Ok(())
    }
}
