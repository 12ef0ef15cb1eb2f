//! Procedural shape classes standing in for a CAD model collection.
//!
//! Each class is a parametric surface, z-up, with a few instance-level shape
//! parameters drawn per sample so that members of a class are not identical.
//! Centrally symmetric classes are sampled in antithetic pairs (p, −p) which
//! keeps their sample centroid exactly at the origin.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{normalize_unit_sphere, Point, PointCloud};
use crate::{Error, Result};

pub const SHAPE_CLASSES: [&str; 8] = [
    "sphere", "cube", "cylinder", "cone", "torus", "pyramid", "disc", "capsule",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
    Pyramid,
    Disc,
    Capsule,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 8] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Pyramid,
        ShapeClass::Disc,
        ShapeClass::Capsule,
    ];

    pub fn name(self) -> &'static str {
        SHAPE_CLASSES[self as usize]
    }

    fn centrally_symmetric(self) -> bool {
        !matches!(self, ShapeClass::Cone | ShapeClass::Pyramid)
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SHAPE_CLASSES
            .iter()
            .position(|&c| c == s)
            .map(|i| ShapeClass::ALL[i])
            .ok_or_else(|| Error::UnknownClass {
                name: s.to_string(),
                valid: SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(),
            })
    }
}

/// Samples `n_points` near-uniformly on the surface of one instance of
/// `class_name`, labelled and normalized to the unit sphere.
pub fn generate_shape<R: Rng + ?Sized>(class_name: &str, n_points: usize, rng: &mut R) -> Result<PointCloud> {
    let class: ShapeClass = class_name.parse()?;
    if n_points < 16 {
        return Err(Error::invalid(format!("n_points {n_points} below minimum of 16")));
    }
    let surface = Surface::draw(class, rng);
    let mut points: Vec<Point> = Vec::with_capacity(n_points);
    if class.centrally_symmetric() {
        while points.len() + 1 < n_points {
            let p = surface.sample(rng);
            points.push(p);
            points.push([-p[0], -p[1], -p[2]]);
        }
    }
    while points.len() < n_points {
        points.push(surface.sample(rng));
    }
    let pc = PointCloud::new(points)?;
    Ok(normalize_unit_sphere(&pc).with_label(class.name()))
}

/// One shape instance with its drawn parameters.
enum Surface {
    Sphere,
    Cube,
    Cylinder { radius: f64, half_height: f64 },
    Cone { radius: f64, height: f64 },
    Torus { major: f64, minor: f64 },
    Pyramid { half_side: f64, height: f64 },
    Disc { radius: f64, half_thickness: f64 },
    Capsule { radius: f64, half_length: f64 },
}

impl Surface {
    fn draw<R: Rng + ?Sized>(class: ShapeClass, rng: &mut R) -> Self {
        match class {
            ShapeClass::Sphere => Surface::Sphere,
            ShapeClass::Cube => Surface::Cube,
            ShapeClass::Cylinder => Surface::Cylinder {
                radius: rng.random_range(0.35..0.6),
                half_height: 1.0,
            },
            ShapeClass::Cone => Surface::Cone {
                radius: rng.random_range(0.7..1.0),
                height: rng.random_range(1.6..2.2),
            },
            ShapeClass::Torus => Surface::Torus {
                major: 1.0,
                minor: rng.random_range(0.2..0.4),
            },
            ShapeClass::Pyramid => Surface::Pyramid {
                half_side: 1.0,
                height: rng.random_range(1.2..1.8),
            },
            ShapeClass::Disc => Surface::Disc {
                radius: 1.0,
                half_thickness: rng.random_range(0.04..0.1),
            },
            ShapeClass::Capsule => Surface::Capsule {
                radius: rng.random_range(0.3..0.45),
                half_length: rng.random_range(0.5..0.8),
            },
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let p = match *self {
            Surface::Sphere => unit_vector(rng),
            Surface::Cube => {
                let face = rng.random_range(0..6usize);
                let a = rng.random_range(-1.0..1.0);
                let b = rng.random_range(-1.0..1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            Surface::Cylinder { radius, half_height } => {
                let lateral = TAU * radius * 2.0 * half_height;
                let caps = 2.0 * PI * radius * radius;
                if rng.random::<f64>() * (lateral + caps) < lateral {
                    let (s, c) = rng.random_range(0.0..TAU).sin_cos();
                    [radius * c, radius * s, rng.random_range(-half_height..half_height)]
                } else {
                    let [x, y] = disc_point(rng, radius);
                    let z = if rng.random::<bool>() { half_height } else { -half_height };
                    [x, y, z]
                }
            }
            Surface::Cone { radius, height } => {
                let slant = (radius * radius + height * height).sqrt();
                let lateral = PI * radius * slant;
                let base = PI * radius * radius;
                if rng.random::<f64>() * (lateral + base) < lateral {
                    // Fraction of the way from apex to base; area grows linearly in t.
                    let t = rng.random::<f64>().sqrt();
                    let (s, c) = rng.random_range(0.0..TAU).sin_cos();
                    [t * radius * c, t * radius * s, height * (1.0 - t)]
                } else {
                    let [x, y] = disc_point(rng, radius);
                    [x, y, 0.0]
                }
            }
            Surface::Torus { major, minor } => {
                // Tube angle by rejection against the local area element.
                let v = loop {
                    let v = rng.random_range(0.0..TAU);
                    let w = (major + minor * v.cos()) / (major + minor);
                    if rng.random::<f64>() <= w {
                        break v;
                    }
                };
                let (su, cu) = rng.random_range(0.0..TAU).sin_cos();
                let ring = major + minor * v.cos();
                [ring * cu, ring * su, minor * v.sin()]
            }
            Surface::Pyramid { half_side, height } => {
                let a = half_side;
                let base_corners = [[-a, -a, 0.0], [a, -a, 0.0], [a, a, 0.0], [-a, a, 0.0]];
                let apex = [0.0, 0.0, height];
                let face_area = a * (height * height + a * a).sqrt();
                let base_area = 4.0 * a * a;
                let total = 4.0 * face_area + base_area;
                let r = rng.random::<f64>() * total;
                if r < base_area {
                    [rng.random_range(-a..a), rng.random_range(-a..a), 0.0]
                } else {
                    let i = (((r - base_area) / face_area) as usize).min(3);
                    triangle_point(rng, base_corners[i], base_corners[(i + 1) % 4], apex)
                }
            }
            Surface::Disc {
                radius,
                half_thickness,
            } => {
                let caps = 2.0 * PI * radius * radius;
                let rim = TAU * radius * 2.0 * half_thickness;
                if rng.random::<f64>() * (caps + rim) < caps {
                    let [x, y] = disc_point(rng, radius);
                    let z = if rng.random::<bool>() { half_thickness } else { -half_thickness };
                    [x, y, z]
                } else {
                    let (s, c) = rng.random_range(0.0..TAU).sin_cos();
                    [radius * c, radius * s, rng.random_range(-half_thickness..half_thickness)]
                }
            }
            Surface::Capsule { radius, half_length } => {
                let lateral = TAU * radius * 2.0 * half_length;
                let ends = 4.0 * PI * radius * radius;
                if rng.random::<f64>() * (lateral + ends) < lateral {
                    let (s, c) = rng.random_range(0.0..TAU).sin_cos();
                    [radius * c, radius * s, rng.random_range(-half_length..half_length)]
                } else {
                    let u = unit_vector(rng);
                    let shift = if u[2] >= 0.0 { half_length } else { -half_length };
                    [radius * u[0], radius * u[1], radius * u[2] + shift]
                }
            }
        };
        [p[0] as f32, p[1] as f32, p[2] as f32]
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return v.map(|c| c / n);
        }
    }
}

fn disc_point<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let (s, c) = rng.random_range(0.0..TAU).sin_cos();
    [r * c, r * s]
}

fn triangle_point<R: Rng + ?Sized>(rng: &mut R, a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let r1 = rng.random::<f64>().sqrt();
    let r2 = rng.random::<f64>();
    let wa = 1.0 - r1;
    let wb = r1 * (1.0 - r2);
    let wc = r1 * r2;
    [
        wa * a[0] + wb * b[0] + wc * c[0],
        wa * a[1] + wb * b[1] + wc * c[1],
        wa * a[2] + wb * b[2] + wc * c[2],
    ]
}
