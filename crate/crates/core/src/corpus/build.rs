use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::images::write_depth;
use super::manifest::{Manifest, ManifestHeader, Split, Triplet};
use super::templates::CaptionTemplate;
use crate::geometry::{generate_shape, normalize_unit_sphere, project_depth, write_point_cloud, ViewPose, SHAPE_CLASSES};
use crate::rng::{stream, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    #[default]
    Depth,
    /// Externally rendered images; readable but not generated here.
    Render,
}

/// What to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub classes: Vec<String>,
    pub unseen: Vec<String>,
    pub per_class: usize,
    /// Points stored per cloud.
    pub n_points: usize,
    /// Points sampled for rendering; the stored cloud is a subset.
    pub render_points: usize,
    pub image_size: usize,
    pub image_mode: ImageMode,
    pub templates: Vec<CaptionTemplate>,
    /// Fraction of each seen class held out as test records.
    pub test_frac: f64,
    /// Camera elevation is uniform in ± this many degrees.
    pub max_elevation_deg: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(),
            unseen: vec!["torus".into(), "capsule".into()],
            per_class: 200,
            n_points: 256,
            render_points: 2048,
            image_size: 64,
            image_mode: ImageMode::Depth,
            templates: CaptionTemplate::defaults(),
            test_frac: 0.2,
            max_elevation_deg: 30.0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.per_class == 0 {
            return Err(Error::config("corpus needs at least one class and one sample per class"));
        }
        if self.templates.is_empty() {
            return Err(Error::config("corpus needs at least one caption template"));
        }
        if self.image_mode != ImageMode::Depth {
            return Err(Error::config("only depth images can be generated"));
        }
        if !(0.0..1.0).contains(&self.test_frac) {
            return Err(Error::config(format!("test_frac {} not in [0, 1)", self.test_frac)));
        }
        if self.render_points < self.n_points {
            return Err(Error::config("render_points must be at least n_points"));
        }
        Ok(())
    }

    pub fn n_test(&self) -> usize {
        (self.test_frac * self.per_class as f64).round() as usize
    }
}

/// Writes `points/`, `images/` and `manifest.jsonl` under `out_dir`.
///
/// Every record draws from its own random stream, so a record's content
/// depends only on `(seed, class position, instance index)`.
pub fn build_corpus(spec: &CorpusSpec, out_dir: &Path, seed: u64) -> Result<Manifest> {
    spec.validate()?;
    for d in ["points", "images"] {
        let p = out_dir.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let n_test = spec.n_test();
    let max_el = spec.max_elevation_deg.to_radians();
    let mut records = Vec::with_capacity(spec.classes.len() * spec.per_class);
    for (ci, class) in spec.classes.iter().enumerate() {
        let unseen = spec.unseen.contains(class);
        for i in 0..spec.per_class {
            let mut rng = stream(seed, Stream::Corpus, ((ci as u64) << 32) | i as u64);
            let id = format!("{class}_{i:04}");
            let dense = generate_shape(class, spec.render_points, &mut rng)?;
            let pose = ViewPose::random(&mut rng, max_el);
            let image = project_depth(&dense, &pose, spec.image_size, spec.image_size)?;
            let stored = normalize_unit_sphere(&dense.resampled(spec.n_points)).with_id(id.clone());
            let template = &spec.templates[rng.random_range(0..spec.templates.len())];
            let pc_path = format!("points/{id}.pcld");
            let image_path = format!("images/{id}.dpth");
            write_point_cloud(&out_dir.join(&pc_path), &stored)?;
            write_depth(&out_dir.join(&image_path), &image)?;
            let split = if unseen || i >= spec.per_class - n_test { Split::Test } else { Split::Train };
            records.push(Triplet {
                id,
                class_name: class.clone(),
                pc_path,
                image_path,
                caption: template.render(class),
                split,
            });
        }
    }
    let manifest = Manifest {
        header: ManifestHeader {
            classes: spec.classes.clone(),
            unseen: spec.unseen.clone(),
            image_mode: spec.image_mode,
        },
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
