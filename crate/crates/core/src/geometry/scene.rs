use serde::{Deserialize, Serialize};

use super::{Point, PointCloud};
use crate::{Error, Result};

/// Object id carried by floor points.
pub const FLOOR_ID: u32 = u32::MAX;

/// Floor point budget as a fraction of the object points.
const FLOOR_FRACTION: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneCloud {
    pub points: Vec<Point>,
    /// Ground-truth object assignment, for evaluation only.
    pub object_ids: Option<Vec<u32>>,
}

impl SceneCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            object_ids: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Uniform scale followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub translation: [f32; 3],
    pub scale: f32,
}

impl Placement {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn at(translation: [f32; 3], scale: f32) -> Self {
        Self { translation, scale }
    }

    fn apply(&self, p: &Point) -> Point {
        [
            p[0] * self.scale + self.translation[0],
            p[1] * self.scale + self.translation[1],
            p[2] * self.scale + self.translation[2],
        ]
    }
}

/// Places each object and concatenates them, tagging points with the object's
/// position in `objects`. With `floor`, a flat grid of points just below the
/// lowest object point is appended with id [`FLOOR_ID`].
pub fn compose_scene(objects: &[(PointCloud, Placement)], floor: bool) -> Result<SceneCloud> {
    if objects.is_empty() {
        return Err(Error::invalid("a scene needs at least one object"));
    }
    let mut points = Vec::new();
    let mut ids = Vec::new();
    for (i, (pc, place)) in objects.iter().enumerate() {
        let finite = place.translation.iter().all(|c| c.is_finite()) && place.scale.is_finite();
        if !finite {
            return Err(Error::invalid(format!("placement of object {i} is not finite")));
        }
        for p in &pc.points {
            points.push(place.apply(p));
            ids.push(i as u32);
        }
    }

    if floor {
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for p in &points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let margin = 0.1 * ((hi[0] - lo[0]).max(hi[1] - lo[1])).max(1.0);
        let z = lo[2] - 0.05 * margin;
        let budget = ((points.len() as f64 * FLOOR_FRACTION) as usize).max(16);
        let side = (budget as f64).sqrt().floor().max(2.0) as usize;
        let (x0, x1) = (lo[0] - margin, hi[0] + margin);
        let (y0, y1) = (lo[1] - margin, hi[1] + margin);
        for i in 0..side {
            for j in 0..side {
                let u = i as f32 / (side - 1) as f32;
                let v = j as f32 / (side - 1) as f32;
                points.push([x0 + u * (x1 - x0), y0 + v * (y1 - y0), z]);
                ids.push(FLOOR_ID);
            }
        }
    }

    Ok(SceneCloud {
        points,
        object_ids: Some(ids),
    })
}
