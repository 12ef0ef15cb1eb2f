#![allow(dead_code)]

use cg3d::encoders::{Cg3dModel, ModelConfig, Vocab};
use cg3d::geometry::{generate_shape, project_depth, ViewPose};
use cg3d::losses::{
    loss_3d_with_grad, loss_prompt_with_grad, nce_with_grad, pair_loss_with_grad, positive_mask, Loss3dTerms,
    PositiveMode, SimilarityBlock,
};
use cg3d::nn::{Grads, ParamGroup, ParamStore};
use cg3d::rng::{seeded, stream, Stream};
use cg3d::training::{grad_check, grad_check_store, GradCheckReport, MIN_COORDS};
use cg3d::Result;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const TAU: f64 = 0.07;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        image_size: 16,
        patch: 8,
        layers: 2,
        heads: 2,
        width: 16,
        text_len: 8,
        n_prompt_tokens: 2,
        n_points: 32,
        point_widths: vec![16, 32],
        point_feature: 32,
    }
}

pub fn tiny_vocab() -> Vocab {
    Vocab::build(["this is a sphere", "a photo of a cube", "a 3d model of a cone"])
}

/// Random unit-norm rows, the domain of every loss input.
fn unit_rows(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, Stream::GradCheck, 1);
    let mut a: Array2<f64> = Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng));
    for mut r in a.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    a
}

/// One named gradient check.
pub struct Check {
    pub name: String,
    pub through_encoders: bool,
    pub report: GradCheckReport,
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn unflat(v: &[f64], shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(shape, v.to_vec()).unwrap()
}

/// Gradient checks of the bare losses on random inputs.
pub fn loss_checks(eps: f64, seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = seeded(seed);

    let s = unit_rows(3, 4, seed).dot(&unit_rows(3, 4, seed + 7).t());
    let mut mask = Array2::from_shape_fn((3, 3), |_| rng.random_bool(0.4));
    for i in 0..3 {
        mask[[i, i]] = true;
    }
    let (_, g) = nce_with_grad(&SimilarityBlock::new(s.clone(), mask.clone(), TAU)?)?;
    let f = |v: &[f64]| nce_with_grad(&SimilarityBlock::new(unflat(v, (3, 3)), mask.clone(), TAU)?).map(|r| r.0);
    out.push(Check {
        name: "nce 3x3".into(),
        through_encoders: false,
        report: grad_check(f, &flat(&s), &flat(&g), eps, MIN_COORDS, seed)?,
    });

    let (b, d) = (4, 6);
    let labels = [0, 1, 0, 2];
    let m = positive_mask(&labels, PositiveMode::Class);
    let a = unit_rows(b, d, seed + 1);
    let c = unit_rows(b, d, seed + 2);
    let t = unit_rows(b, d, seed + 3);
    let joined = |x: &[&Array2<f64>]| x.iter().flat_map(|a| flat(a)).collect::<Vec<_>>();
    let split = |v: &[f64], k: usize| unflat(&v[k * b * d..(k + 1) * b * d], (b, d));

    let p = pair_loss_with_grad(a.view(), c.view(), &m, TAU)?;
    let f = |v: &[f64]| pair_loss_with_grad(split(v, 0).view(), split(v, 1).view(), &m, TAU).map(|r| r.loss);
    out.push(Check {
        name: "pair_loss".into(),
        through_encoders: false,
        report: grad_check(f, &joined(&[&a, &c]), &joined(&[&p.d_a, &p.d_b]), eps, MIN_COORDS, seed)?,
    });

    let l = loss_3d_with_grad(a.view(), c.view(), t.view(), &m, TAU, Loss3dTerms::default())?;
    let f = |v: &[f64]| {
        loss_3d_with_grad(split(v, 0).view(), split(v, 1).view(), split(v, 2).view(), &m, TAU, Loss3dTerms::default())
            .map(|r| r.loss)
    };
    let g = joined(&[&l.d_3d, l.d_2d.as_ref().unwrap(), l.d_text.as_ref().unwrap()]);
    out.push(Check {
        name: "loss_3d".into(),
        through_encoders: false,
        report: grad_check(f, &joined(&[&a, &c, &t]), &g, eps, MIN_COORDS, seed)?,
    });

    let p = loss_prompt_with_grad(c.view(), t.view(), &m, TAU)?;
    let f = |v: &[f64]| loss_prompt_with_grad(split(v, 0).view(), split(v, 1).view(), &m, TAU).map(|r| r.loss);
    out.push(Check {
        name: "loss_prompt".into(),
        through_encoders: false,
        report: grad_check(f, &joined(&[&c, &t]), &joined(&[&p.d_a, &p.d_b]), eps, MIN_COORDS, seed)?,
    });
    Ok(out)
}

/// A two-sample batch for the full model.
pub struct Batch {
    pub points: Array2<f64>,
    pub images: Array3<f64>,
    pub tokens: Vec<cg3d::encoders::TokenSeq>,
    pub mask: Array2<bool>,
}

pub fn tiny_batch(m: &Cg3dModel<f64>, seed: u64) -> Result<Batch> {
    let classes = ["sphere", "cube"];
    let captions = ["this is a sphere", "a photo of a cube"];
    let clouds = classes
        .iter()
        .enumerate()
        .map(|(i, c)| generate_shape(c, 64, &mut stream(seed, Stream::Corpus, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let s = m.config.image_size;
    let pose = ViewPose::random(&mut seeded(seed), 0.5);
    let images = clouds.iter().map(|c| project_depth(c, &pose, s, s)).collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        points: m.point_batch(&clouds)?,
        images: m.image_batch(&images)?,
        tokens: captions.iter().map(|t| m.tokenize(t)).collect(),
        mask: positive_mask(&[0, 1], PositiveMode::Class),
    })
}

fn with_params(m: &Cg3dModel<f64>, ps: &ParamStore<f64>) -> Cg3dModel<f64> {
    let mut m = m.clone();
    m.params = ps.clone();
    m
}

/// `L_3D` through all three encoders (prompted image pathway) and its
/// gradient over every group.
pub fn full_l3d(m: &Cg3dModel<f64>, b: &Batch, groups: &[ParamGroup]) -> Result<(f64, Grads<f64>)> {
    let pp = m.forward_points(&b.points, 2)?;
    let ip = m.forward_images(&b.images, true)?;
    let tp = m.forward_texts(&b.tokens)?;
    let l = loss_3d_with_grad(pp.emb.view(), ip.emb.view(), tp.emb.view(), &b.mask, TAU, Loss3dTerms::default())?;
    let mut g = Grads::new(&m.params, groups);
    m.backward_points(&pp, &l.d_3d, &mut g);
    m.backward_images(&ip, l.d_2d.as_ref().unwrap(), &mut g);
    m.backward_texts(&tp, l.d_text.as_ref().unwrap(), &mut g);
    Ok((l.loss, g))
}

/// `L_P` through the prompted image pathway and the text tower.
pub fn full_lp(m: &Cg3dModel<f64>, b: &Batch, groups: &[ParamGroup]) -> Result<(f64, Grads<f64>)> {
    let ip = m.forward_images(&b.images, true)?;
    let tp = m.forward_texts(&b.tokens)?;
    let l = loss_prompt_with_grad(ip.emb.view(), tp.emb.view(), &b.mask, TAU)?;
    let mut g = Grads::new(&m.params, groups);
    m.backward_images(&ip, &l.d_a, &mut g);
    m.backward_texts(&tp, &l.d_b, &mut g);
    Ok((l.loss, g))
}

const ENCODER_GROUPS: [ParamGroup; 7] = [
    ParamGroup::Enc3d,
    ParamGroup::Proj3d,
    ParamGroup::Base2d,
    ParamGroup::Proj2d,
    ParamGroup::BaseText,
    ParamGroup::ProjText,
    ParamGroup::Prompts,
];

/// Per-group checks of both losses through the encoder stacks, at least
/// [`MIN_COORDS`] coordinates per group (or all of a smaller group).
pub fn encoder_checks(eps: f64, seed: u64) -> Result<Vec<Check>> {
    let m = Cg3dModel::<f64>::new(tiny_config(), tiny_vocab(), seed)?;
    let b = tiny_batch(&m, seed)?;
    let mut out = Vec::new();
    type LossFn = fn(&Cg3dModel<f64>, &Batch, &[ParamGroup]) -> Result<(f64, Grads<f64>)>;
    let losses: [(&str, LossFn, &[ParamGroup]); 2] = [
        ("L_3D", full_l3d, &ENCODER_GROUPS),
        ("L_P", full_lp, &[ParamGroup::Base2d, ParamGroup::Proj2d, ParamGroup::BaseText, ParamGroup::ProjText, ParamGroup::Prompts]),
    ];
    for (name, loss, groups) in losses {
        let (_, g) = loss(&m, &b, groups)?;
        for &grp in groups {
            let f = |ps: &ParamStore<f64>| loss(&with_params(&m, ps), &b, &[]).map(|r| r.0);
            let report = grad_check_store(&m.params, &[grp], f, &g, eps, MIN_COORDS, seed)?;
            out.push(Check {
                name: format!("{name} wrt {grp}"),
                through_encoders: true,
                report,
            });
        }
    }
    Ok(out)
}

/// Small corpora and a stage-0 base for end-to-end training tests.
pub mod toy {
    use std::path::Path;

    use cg3d::corpus::{build_corpus, CorpusSpec, Dataset};
    use cg3d::encoders::ModelConfig;
    use cg3d::training::{build_vocab, pretrain_bimodal, BimodalConfig, BimodalRow, Checkpoint};
    use cg3d::Result;

    pub fn model_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 16,
            image_size: 16,
            patch: 8,
            layers: 1,
            heads: 2,
            width: 32,
            n_prompt_tokens: 2,
            n_points: 48,
            point_widths: vec![32, 64],
            point_feature: 64,
            ..ModelConfig::default()
        }
    }

    pub fn spec(classes: &[&str], unseen: &[&str], per_class: usize) -> CorpusSpec {
        CorpusSpec {
            classes: classes.iter().map(|s| s.to_string()).collect(),
            unseen: unseen.iter().map(|s| s.to_string()).collect(),
            per_class,
            n_points: 48,
            render_points: 256,
            image_size: 16,
            test_frac: 0.25,
            ..CorpusSpec::default()
        }
    }

    pub const CLASSES: [&str; 4] = ["sphere", "cube", "cone", "torus"];

    /// Stage-0 base trained on every class, plus a CG3D corpus with `torus`
    /// unseen that shares its vocabulary.
    pub struct World {
        pub base: Checkpoint,
        pub stage0_log: Vec<BimodalRow>,
        pub data: Dataset,
    }

    pub fn world(dir: &Path, stage0_steps: u64, seed: u64) -> Result<World> {
        let mc = model_config();
        let m0 = build_corpus(&spec(&CLASSES, &[], 12), &dir.join("s0"), seed + 100)?;
        let vocab = build_vocab(&m0);
        let d0 = Dataset::load(m0, &vocab, mc.text_len)?;
        let cfg = BimodalConfig {
            batch_size: 16,
            steps: stage0_steps,
            ..BimodalConfig::default()
        };
        let (base, stage0_log) = pretrain_bimodal(&d0, &mc, &cfg, seed)?;
        let m1 = build_corpus(&spec(&CLASSES, &["torus"], 12), &dir.join("c"), seed + 200)?;
        let data = Dataset::load(m1, &base.model.vocab, mc.text_len)?;
        Ok(World { base, stage0_log, data })
    }
}
