//! Stage-0 image-text pre-training, alternating CG3D pre-training,
//! fine-tuning, linear probing and gradient checking.

mod bimodal;
mod cg3d;
mod checkpoint;
mod config;
mod finetune;
mod gradcheck;
mod log;
mod optim;
mod probe;

pub use bimodal::{build_vocab, pretrain_bimodal, sample_batch, BimodalRow};
pub use cg3d::{pretrain_cg3d, Cg3dTrainer, OPT_3D, OPT_PROMPT};
pub use checkpoint::{Checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use config::{Ablation, BimodalConfig, FinetuneConfig, ProbeConfig, RunConfig, TrainConfig};
pub use finetune::{finetune, labeled_clouds, stratified_subset, FinetuneInit, FinetuneOutcome, PointClassifier};
pub use gradcheck::{grad_check, grad_check_store, noise_floor, relative_error, GradCheckReport, MIN_COORDS, NOISE_HEADROOM, REL_FLOOR};
pub use log::{log_to_csv, parse_log, smoothed_ends, write_log, LogRow, LOG_HEADER};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, OptimizerState};
pub use probe::{linear_probe, probe_image_features, ImageProbe, LinearProbe};
