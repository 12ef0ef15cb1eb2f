use rand::Rng;

use super::images::read_depth;
use super::manifest::Manifest;
use crate::encoders::{tokenize, TokenSeq, Vocab};
use crate::geometry::{augment, read_point_cloud, AugmentConfig, DepthImage, PointCloud};
use crate::{Error, Result};

/// Training mode augments point clouds; evaluation returns them as stored.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadMode {
    Train(AugmentConfig),
    Eval,
}

/// Aligned samples; `labels` index the manifest's class list.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub clouds: Vec<PointCloud>,
    pub images: Vec<DepthImage>,
    pub tokens: Vec<TokenSeq>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Sample {
    id: String,
    label: usize,
    cloud: PointCloud,
    image: DepthImage,
    tokens: TokenSeq,
}

/// A manifest with every record read into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    samples: Vec<Sample>,
}

fn read_sample(m: &Manifest, index: usize, vocab: &Vocab, text_len: usize) -> Result<Sample> {
    let r = m
        .records
        .get(index)
        .ok_or_else(|| Error::invalid(format!("record index {index} out of range (have {})", m.records.len())))?;
    let wrap = |e: Error| Error::Record {
        id: r.id.clone(),
        source: Box::new(e),
    };
    let label = m
        .class_index(&r.class_name)
        .ok_or_else(|| wrap(Error::config(format!("class `{}` not in manifest", r.class_name))))?;
    let cloud = read_point_cloud(&m.resolve(&r.pc_path))
        .map_err(wrap)?
        .with_label(r.class_name.clone())
        .with_id(r.id.clone());
    let image = read_depth(&m.resolve(&r.image_path)).map_err(wrap)?;
    Ok(Sample {
        id: r.id.clone(),
        label,
        cloud,
        image,
        tokens: tokenize(&r.caption, vocab, text_len),
    })
}

fn assemble<'a, R: Rng + ?Sized>(samples: impl Iterator<Item = &'a Sample>, mode: &LoadMode, rng: &mut R) -> Result<Batch> {
    let mut b = Batch {
        ids: Vec::new(),
        clouds: Vec::new(),
        images: Vec::new(),
        tokens: Vec::new(),
        labels: Vec::new(),
    };
    for s in samples {
        let cloud = match mode {
            LoadMode::Train(cfg) => augment(&s.cloud, cfg, rng)?,
            LoadMode::Eval => s.cloud.clone(),
        };
        b.ids.push(s.id.clone());
        b.clouds.push(cloud);
        b.images.push(s.image.clone());
        b.tokens.push(s.tokens.clone());
        b.labels.push(s.label);
    }
    Ok(b)
}

/// Reads the given records from disk.
pub fn load_batch<R: Rng + ?Sized>(
    manifest: &Manifest,
    indices: &[usize],
    vocab: &Vocab,
    text_len: usize,
    mode: &LoadMode,
    rng: &mut R,
) -> Result<Batch> {
    let samples = indices
        .iter()
        .map(|&i| read_sample(manifest, i, vocab, text_len))
        .collect::<Result<Vec<_>>>()?;
    assemble(samples.iter(), mode, rng)
}

impl Dataset {
    pub fn load(manifest: Manifest, vocab: &Vocab, text_len: usize) -> Result<Self> {
        let samples = (0..manifest.records.len())
            .map(|i| read_sample(&manifest, i, vocab, text_len))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn batch<R: Rng + ?Sized>(&self, indices: &[usize], mode: &LoadMode, rng: &mut R) -> Result<Batch> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.samples.len()) {
            return Err(Error::invalid(format!("record index {i} out of range (have {})", self.samples.len())));
        }
        assemble(indices.iter().map(|&i| &self.samples[i]), mode, rng)
    }

    pub fn label(&self, index: usize) -> usize {
        self.samples[index].label
    }

    pub fn cloud(&self, index: usize) -> &PointCloud {
        &self.samples[index].cloud
    }

    pub fn image(&self, index: usize) -> &DepthImage {
        &self.samples[index].image
    }

    pub fn tokens(&self, index: usize) -> &TokenSeq {
        &self.samples[index].tokens
    }

    pub fn id(&self, index: usize) -> &str {
        &self.samples[index].id
    }
}

#[cfg(test)]
mod tests {
    use super::super::build::{build_corpus, CorpusSpec};
    use super::*;
    use crate::rng::seeded;

    fn corpus(dir: &std::path::Path) -> Manifest {
        let spec = CorpusSpec {
            per_class: 2,
            n_points: 64,
            render_points: 128,
            image_size: 16,
            ..CorpusSpec::default()
        };
        build_corpus(&spec, dir, 3).unwrap()
    }

    fn vocab(m: &Manifest) -> Vocab {
        Vocab::build(m.records.iter().map(|r| r.caption.as_str()))
    }

    #[test]
    fn batch_of_four_is_aligned() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(dir.path());
        let v = vocab(&m);
        let b = load_batch(&m, &[0, 3, 5, 7], &v, 16, &LoadMode::Train(AugmentConfig::default()), &mut seeded(1)).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.labels.iter().all(|&l| l < m.classes().len()));
        for (id, l) in b.ids.iter().zip(&b.labels) {
            assert!(id.starts_with(&m.classes()[*l]));
        }
    }

    #[test]
    fn eval_mode_reloads_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(dir.path());
        let v = vocab(&m);
        let a = load_batch(&m, &[1, 2], &v, 16, &LoadMode::Eval, &mut seeded(1)).unwrap();
        let b = load_batch(&m, &[1, 2], &v, 16, &LoadMode::Eval, &mut seeded(2)).unwrap();
        assert_eq!(a, b);
        let ds = Dataset::load(m, &v, 16).unwrap();
        assert_eq!(ds.batch(&[1, 2], &LoadMode::Eval, &mut seeded(3)).unwrap(), a);
    }

    #[test]
    fn bad_index_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(dir.path());
        let v = vocab(&m);
        assert!(matches!(
            load_batch(&m, &[999], &v, 16, &LoadMode::Eval, &mut seeded(1)),
            Err(Error::InvalidArgument(_))
        ));
        std::fs::remove_file(m.resolve(&m.records[0].pc_path)).unwrap();
        match load_batch(&m, &[0], &v, 16, &LoadMode::Eval, &mut seeded(1)) {
            Err(Error::Record { id, .. }) => assert_eq!(id, m.records[0].id),
            other => panic!("{other:?}"),
        }
    }
}
