//! Contrastive alignment of a point-cloud encoder against frozen image and
//! text encoders, with deep visual prompt tuning on the image side.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: point clouds, augmentation, depth projection, procedural shapes and scenes.
//! - [`corpus`]: caption templates, on-disk triplet corpora and batch loading.
//! - [`nn`]: parameter store and hand-differentiated layers shared by the encoders.
//! - [`encoders`]: point-set, vision and text encoders plus projection heads.
//! - [`prompts`]: prompt-token lifecycle and serialization.
//! - [`losses`]: the multi-positive NCE objective and its composites.
//! - [`training`]: bimodal pre-training, alternating CG3D training, fine-tuning, probing.
//! - [`inference`]: zero-shot classification, retrieval, scene clustering and querying.

pub mod corpus;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod nn;
pub mod prompts;
pub mod real;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
