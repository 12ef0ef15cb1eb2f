//! Point-cloud / depth-image / caption triplet corpora.

mod build;
mod dataset;
mod images;
mod manifest;
mod templates;

pub use build::{build_corpus, CorpusSpec, ImageMode};
pub use dataset::{load_batch, Batch, Dataset, LoadMode};
pub use images::{decode_depth, encode_depth, read_depth, write_depth, DPTH_MAGIC};
pub use manifest::{Manifest, ManifestHeader, Split, Triplet};
pub use templates::{render_caption, CaptionTemplate, DEFAULT_TEMPLATES, ZERO_SHOT_TEMPLATE};
