//! The three modality encoders, the tokenizer, and the projection heads onto
//! the shared unit hypersphere.

mod config;
mod model;
mod point;
mod projection;
mod text;
mod vision;
mod vocab;

pub use config::ModelConfig;
pub use model::{Cg3dModel, ImagePass, Modality, PointPass, TextPass};
pub use point::{PointNetCache, PointNetEncoder, PointSetEncoder};
pub use projection::{ProjectionCache, ProjectionHead};
pub use text::{TextCache, TextEncoder};
pub use vision::{VisionCache, VisionEncoder};
pub use vocab::{tokenize, TokenSeq, Vocab, BOS, EOS, PAD, UNK};
