//! Zero-shot classification, retrieval, scene clustering and language scene
//! querying.

mod export;
mod kmeans;
mod metrics;
mod retrieval;
mod scene;
mod zeroshot;

pub use export::{embed_records, embeddings_csv, export_embeddings};
pub use kmeans::{kmeans, kmeans_pp_init, lloyd, objective, KMeans, MAX_ITER};
pub use metrics::{adjusted_rand_index, argmax, softmax};
pub use retrieval::{RetrievalHit, RetrievalIndex};
pub use scene::{cluster_points, cluster_scene, embed_clusters, scene_query, strip_floor_ceiling, ClusterSet, Clustering, RankedCluster};
pub use zeroshot::{build_text_bank, zero_shot_accuracy, zero_shot_classify, zero_shot_scores, TextClassBank, ZeroShot};
