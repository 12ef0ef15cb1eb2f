use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::metrics::softmax;
use crate::encoders::Cg3dModel;
use crate::geometry::{normalize_unit_sphere, PointCloud, SceneCloud};
use crate::{Error, Result};

/// Height percentiles outside which points count as floor or ceiling.
pub const STRIP_LOW: f64 = 0.05;
pub const STRIP_HIGH: f64 = 0.95;

/// Indices of points whose height lies within the 5th..95th percentile band.
pub fn strip_floor_ceiling(scene: &SceneCloud) -> Vec<usize> {
    let mut z: Vec<f32> = scene.points.iter().map(|p| p[2]).collect();
    z.sort_by(f32::total_cmp);
    let m = z.len();
    if m == 0 {
        return Vec::new();
    }
    let at = |q: f64| z[((q * (m - 1) as f64).round() as usize).min(m - 1)];
    let (lo, hi) = (at(STRIP_LOW), at(STRIP_HIGH));
    (0..m).filter(|&i| (lo..=hi).contains(&scene.points[i][2])).collect()
}

/// A k-means partition of (a subset of) a scene's points.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub seed: u64,
    pub strip_floor: bool,
    /// Scene indices that were clustered, ascending.
    pub kept: Vec<usize>,
    /// Cluster of each kept point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<[f64; 3]>,
}

impl Clustering {
    /// Scene indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.kept
            .iter()
            .zip(&self.assignment)
            .filter(|(_, &a)| a == c)
            .map(|(&i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    /// Axis-aligned bounds of cluster `c` as (min, max).
    pub fn bbox(&self, scene: &SceneCloud, c: usize) -> ([f32; 3], [f32; 3]) {
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for i in self.members(c) {
            for d in 0..3 {
                lo[d] = lo[d].min(scene.points[i][d]);
                hi[d] = hi[d].max(scene.points[i][d]);
            }
        }
        (lo, hi)
    }
}

/// Clustering plus one unit-norm 3D embedding per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub clustering: Clustering,
    pub embeddings: Array2<f32>,
}

pub fn cluster_points(scene: &SceneCloud, k: usize, seed: u64, strip_floor: bool) -> Result<Clustering> {
    let kept: Vec<usize> = if strip_floor {
        strip_floor_ceiling(scene)
    } else {
        (0..scene.len()).collect()
    };
    if k == 0 || k > kept.len() {
        return Err(Error::invalid(format!("k = {k} must be in [1, {}]", kept.len())));
    }
    let pts: Vec<[f64; 3]> = kept
        .iter()
        .map(|&i| scene.points[i].map(|v| v as f64))
        .collect();
    let km = kmeans(&pts, k, seed)?;
    let c = Clustering {
        k,
        seed,
        strip_floor,
        kept,
        assignment: km.assignment,
        centroids: km.centroids,
    };
    if c.sizes().contains(&0) {
        return Err(Error::invalid(format!("scene has fewer than {k} distinct point groups")));
    }
    Ok(c)
}

/// Recentres and rescales each cluster to the unit sphere and encodes it.
pub fn embed_clusters(scene: &SceneCloud, clustering: Clustering, model: &Cg3dModel<f32>) -> Result<ClusterSet> {
    let clouds = (0..clustering.k)
        .map(|c| {
            let pts = clustering.members(c).into_iter().map(|i| scene.points[i]).collect();
            Ok(normalize_unit_sphere(&PointCloud::new(pts)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let embeddings = model.embed_clouds(&clouds)?;
    Ok(ClusterSet { clustering, embeddings })
}

pub fn cluster_scene(
    scene: &SceneCloud,
    k: usize,
    seed: u64,
    strip_floor: bool,
    model: &Cg3dModel<f32>,
) -> Result<ClusterSet> {
    embed_clusters(scene, cluster_points(scene, k, seed, strip_floor)?, model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCluster {
    pub cluster: usize,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Softmax over clusters of the query's inner products with the cluster
/// embeddings; ranked by score, ties to the lower cluster index.
pub fn scene_query(clusters: &ClusterSet, text: &str, model: &Cg3dModel<f32>) -> Result<Vec<RankedCluster>> {
    if text.trim().is_empty() {
        return Err(Error::invalid("query text is empty"));
    }
    let q = model.embed_texts(&[text])?;
    Ok(rank_clusters(&clusters.embeddings, q.row(0)))
}

pub(crate) fn rank_clusters(embeddings: &Array2<f32>, q: ndarray::ArrayView1<f32>) -> Vec<RankedCluster> {
    let sims: Vec<f64> = embeddings.rows().into_iter().map(|r| r.dot(&q) as f64).collect();
    let scores = softmax(&sims);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .enumerate()
        .map(|(r, c)| RankedCluster {
            cluster: c,
            score: scores[c],
            rank: r + 1,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_blob_scene() -> SceneCloud {
        let mut pts = Vec::new();
        for i in 0..50 {
            let t = i as f32 * 0.01;
            pts.push([t, -t, t * 0.5]);
            pts.push([10.0 + t, 10.0 - t, 10.0 + t]);
        }
        SceneCloud::new(pts)
    }

    #[test]
    fn clusters_partition_kept_points() {
        let s = two_blob_scene();
        let c = cluster_points(&s, 2, 1, false).unwrap();
        assert_eq!(c.sizes(), vec![50, 50]);
        let mut all: Vec<usize> = (0..2).flat_map(|k| c.members(k)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(cluster_points(&s, 2, 1, false).unwrap(), c);
        assert!(cluster_points(&s, 101, 1, false).is_err());
    }

    #[test]
    fn strip_removes_extremes() {
        let pts: Vec<[f32; 3]> = (0..100).map(|i| [0.0, 0.0, i as f32]).collect();
        let kept = strip_floor_ceiling(&SceneCloud::new(pts));
        assert_eq!(kept.first(), Some(&5));
        assert_eq!(kept.last(), Some(&94));
    }

    #[test]
    fn orthogonal_query_gives_uniform_scores() {
        let e = array![[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let r = rank_clusters(&e, array![0.0f32, 0.0, 1.0].view());
        assert!(r.iter().all(|c| (c.score - 0.5).abs() < 1e-12));
        assert_eq!(r[0].cluster, 0);
    }

    #[test]
    fn ranking_follows_relabeling() {
        let e = array![[1.0f32, 0.0], [0.6, 0.8], [0.0, 1.0]];
        let q = array![0.8f32, 0.6];
        let a = rank_clusters(&e, q.view());
        let perm = [2usize, 0, 1];
        let ep = ndarray::stack(ndarray::Axis(0), &perm.iter().map(|&i| e.row(i)).collect::<Vec<_>>()).unwrap();
        let b = rank_clusters(&ep, q.view());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.cluster, perm[y.cluster]);
            assert!((x.score - y.score).abs() < 1e-12);
        }
        let total: f64 = a.iter().map(|c| c.score).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
