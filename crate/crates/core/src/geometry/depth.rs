use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::{Error, Result};

/// Smallest value an occupied pixel can take; depths beyond the far plane are
/// clamped here so that occupied pixels stay strictly positive.
pub const MIN_OCCUPIED: f32 = 1.0 / 256.0;

/// Orthographic camera: rotate into view space, then scale. The camera looks
/// down the view-space −z axis, so larger z is nearer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub rotation: [[f64; 3]; 3],
    pub scale: f64,
}

impl Default for ViewPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl ViewPose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            scale: 1.0,
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], scale: f64) -> Result<Self> {
        let pose = Self { rotation, scale };
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("view scale {scale} must be positive")));
        }
        if pose.orthonormality_error() > 1e-6 {
            return Err(Error::invalid("view rotation is not orthonormal"));
        }
        Ok(pose)
    }

    /// Side view of a z-up object: spin by `azimuth` about z, then look along the
    /// horizontal with the camera raised by `elevation` (radians).
    pub fn side_view(azimuth: f64, elevation: f64) -> Self {
        let rz = rot_z(azimuth);
        // Tip z-up to view-space y-up, then tilt about the view x axis.
        let rx = rot_x(elevation - std::f64::consts::FRAC_PI_2);
        Self {
            rotation: matmul3(&rx, &rz),
            scale: 1.0,
        }
    }

    /// Uniform azimuth in [0, 2π) and elevation uniform in ±`max_elevation`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_elevation: f64) -> Self {
        let az = rng.random_range(0.0..std::f64::consts::TAU);
        let el = if max_elevation > 0.0 {
            rng.random_range(-max_elevation..=max_elevation)
        } else {
            0.0
        };
        Self::side_view(az, el)
    }

    /// max |R·Rᵀ − I| entry.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let mut err = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((dot - target).abs());
            }
        }
        err
    }

    pub fn apply(&self, p: &[f32; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let v = [p[0] as f64, p[1] as f64, p[2] as f64];
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = self.scale * (r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2]);
        }
        out
    }
}

fn rot_z(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rot_x(a: f64) -> [[f64; 3]; 3] {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Single-channel depth rendering. Background is exactly 0, occupied pixels
/// lie in (0, 1] with brighter meaning nearer.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub height: usize,
    pub width: usize,
    /// Row-major, row 0 at the top.
    pub pixels: Vec<f32>,
    /// Pose the image was rendered from; unknown for images read from disk.
    pub view: Option<ViewPose>,
}

impl DepthImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
            view: None,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn occupied(&self) -> usize {
        self.pixels.iter().filter(|&&v| v > 0.0).count()
    }
}

/// Orthographic depth projection over the square [−1, 1]², nearest point wins.
///
/// Pixel value is `1 − d` where `d = (1 − z)/2` is the normalized depth of the
/// posed point, clamped so occupied pixels never reach 0. Points outside the
/// square are clipped onto the border pixels.
pub fn project_depth(pc: &PointCloud, pose: &ViewPose, height: usize, width: usize) -> Result<DepthImage> {
    if height < 8 || width < 8 {
        return Err(Error::invalid(format!("depth image {height}x{width} smaller than 8x8")));
    }
    let mut img = DepthImage::zeros(height, width);
    img.view = Some(*pose);
    for p in &pc.points {
        let q = pose.apply(p);
        let col = pixel_index((q[0] + 1.0) * 0.5, width);
        let row = pixel_index((1.0 - q[1]) * 0.5, height);
        let depth = ((1.0 - q[2]) * 0.5).clamp(0.0, 1.0);
        let value = ((1.0 - depth) as f32).max(MIN_OCCUPIED);
        let px = &mut img.pixels[row * width + col];
        if value > *px {
            *px = value;
        }
    }
    Ok(img)
}

#[inline]
fn pixel_index(unit: f64, n: usize) -> usize {
    let i = (unit * n as f64).floor();
    if i < 0.0 {
        0
    } else {
        (i as usize).min(n - 1)
    }
}
