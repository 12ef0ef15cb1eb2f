use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::{Error, Result};

/// Training-time point-cloud augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub scale_min: f32,
    pub scale_max: f32,
    /// Random rotation about the vertical (z) axis, angle uniform in [0, 2π).
    pub rotate: bool,
    /// Fraction of points removed, rounded to the nearest count.
    pub drop_frac: f32,
    pub jitter_sigma: f32,
    pub jitter_clip: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale_min: 0.8,
            scale_max: 1.2,
            rotate: true,
            drop_frac: 0.2,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            scale_min: 1.0,
            scale_max: 1.0,
            rotate: false,
            drop_frac: 0.0,
            jitter_sigma: 0.0,
            jitter_clip: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::config(format!(
                "augment scale range [{}, {}] is invalid",
                self.scale_min, self.scale_max
            )));
        }
        if !(0.0..1.0).contains(&self.drop_frac) {
            return Err(Error::config(format!("drop_frac {} not in [0, 1)", self.drop_frac)));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_clip >= 0.0) {
            return Err(Error::config("jitter parameters must be non-negative"));
        }
        Ok(())
    }
}

/// Applies scale, z-rotation, random drop and clipped Gaussian jitter, in that
/// order. At least one point always survives the drop.
pub fn augment<R: Rng + ?Sized>(pc: &PointCloud, cfg: &AugmentConfig, rng: &mut R) -> Result<PointCloud> {
    cfg.validate()?;
    let mut points = pc.points.clone();

    let scale = if cfg.scale_min == cfg.scale_max {
        cfg.scale_min
    } else {
        rng.random_range(cfg.scale_min..cfg.scale_max)
    };
    if scale != 1.0 {
        for p in &mut points {
            for c in p.iter_mut() {
                *c *= scale;
            }
        }
    }

    if cfg.rotate {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = angle.sin_cos();
        for p in &mut points {
            let (x, y) = (p[0] as f64, p[1] as f64);
            p[0] = (c * x - s * y) as f32;
            p[1] = (s * x + c * y) as f32;
        }
    }

    let n = points.len();
    let n_drop = ((cfg.drop_frac as f64) * n as f64).round() as usize;
    let n_drop = n_drop.min(n.saturating_sub(1));
    if n_drop > 0 {
        let mut keep: Vec<usize> = sample(rng, n, n - n_drop).into_vec();
        keep.sort_unstable();
        points = keep.into_iter().map(|i| points[i]).collect();
    }

    if cfg.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0f32, cfg.jitter_sigma).expect("sigma checked");
        let clip = cfg.jitter_clip;
        for p in &mut points {
            for c in p.iter_mut() {
                *c += normal.sample(rng).clamp(-clip, clip);
            }
        }
    }

    Ok(PointCloud {
        points,
        label: pc.label.clone(),
        id: pc.id.clone(),
    })
}
