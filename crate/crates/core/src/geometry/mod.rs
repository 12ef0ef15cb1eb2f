//! Point clouds and everything that produces or transforms them.

mod augment;
mod depth;
mod io;
mod scene;
mod shapes;

pub use augment::{augment, AugmentConfig};
pub use depth::{project_depth, DepthImage, ViewPose};
pub use io::{
    decode_any, decode_point_cloud, encode_point_cloud, parse_xyz, read_point_cloud, write_point_cloud,
    write_xyz, PCLD_MAGIC, PCLD_VERSION,
};
pub use scene::{compose_scene, Placement, SceneCloud, FLOOR_ID};
pub use shapes::{generate_shape, ShapeClass, SHAPE_CLASSES};

use crate::{Error, Result};

pub type Point = [f32; 3];

/// A labelled set of 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub label: Option<String>,
    pub id: Option<String>,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            label: None,
            id: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 3] {
        centroid(&self.points)
    }

    /// Largest distance of any point from the origin.
    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(|p| norm64(p)).fold(0.0, f64::max)
    }

    /// Deterministically resamples to exactly `n` points: strided subsampling
    /// when too large, cyclic repetition when too small.
    pub fn resampled(&self, n: usize) -> PointCloud {
        let m = self.points.len();
        let points = if m == n {
            self.points.clone()
        } else if m > n {
            (0..n).map(|i| self.points[i * m / n]).collect()
        } else {
            (0..n).map(|i| self.points[i % m]).collect()
        };
        PointCloud {
            points,
            label: self.label.clone(),
            id: self.id.clone(),
        }
    }
}

pub(crate) fn centroid(points: &[Point]) -> [f64; 3] {
    let mut c = [0.0f64; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] as f64;
        }
    }
    let n = points.len().max(1) as f64;
    c.map(|v| v / n)
}

pub(crate) fn norm64(p: &Point) -> f64 {
    p.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt()
}

/// Centres the cloud on its centroid and scales it so the farthest point lies
/// on the unit sphere. Point order is preserved. A cloud whose points all
/// coincide collapses to the origin.
pub fn normalize_unit_sphere(pc: &PointCloud) -> PointCloud {
    let c = centroid(&pc.points);
    let centred: Vec<[f64; 3]> = pc
        .points
        .iter()
        .map(|p| [p[0] as f64 - c[0], p[1] as f64 - c[1], p[2] as f64 - c[2]])
        .collect();
    let r = centred
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    let scale = if r > 1e-12 { 1.0 / r } else { 0.0 };
    let points = centred
        .iter()
        .map(|p| {
            [
                (p[0] * scale) as f32,
                (p[1] * scale) as f32,
                (p[2] * scale) as f32,
            ]
        })
        .collect();
    PointCloud {
        points,
        label: pc.label.clone(),
        id: pc.id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn symmetric_pair_normalizes_to_unit_axis() {
        let pc = PointCloud::new(vec![[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0]]).unwrap();
        let out = normalize_unit_sphere(&pc);
        assert_eq!(out.points, vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
    }

    #[test]
    fn single_point_collapses_to_origin() {
        let pc = PointCloud::new(vec![[5.0, 5.0, 5.0]]).unwrap();
        assert_eq!(normalize_unit_sphere(&pc).points, vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn random_cloud_is_centred_with_unit_radius() {
        let mut rng = crate::rng::seeded(11);
        let pts: Vec<Point> = (0..64)
            .map(|_| [rng.random_range(-3.0..5.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..9.0)])
            .collect();
        let out = normalize_unit_sphere(&PointCloud::new(pts).unwrap());
        let c = out.centroid();
        assert!((c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt() < 1e-6);
        let r = out.max_radius();
        assert!((r - 1.0).abs() <= 1e-6, "radius {r}");
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f32::NAN, 0.0]]).is_err());
    }

    #[test]
    fn resample_keeps_members() {
        let pc = PointCloud::new((0..10).map(|i| [i as f32, 0.0, 0.0]).collect()).unwrap();
        let down = pc.resampled(4);
        assert_eq!(down.len(), 4);
        let up = pc.resampled(25);
        assert_eq!(up.len(), 25);
        assert!(up.points.iter().all(|p| pc.points.contains(p)));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(pts in prop::collection::vec(prop::array::uniform3(-100.0f32..100.0), 2..80)) {
            let pc = PointCloud::new(pts).unwrap();
            let once = normalize_unit_sphere(&pc);
            let twice = normalize_unit_sphere(&once);
            for (a, b) in once.points.iter().zip(&twice.points) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-6);
                }
            }
        }
    }
}
