use std::fs;
use std::path::{Path, PathBuf};

use cg3d::corpus::{build_corpus, read_depth, Dataset, Manifest, Split, ZERO_SHOT_TEMPLATE};
use cg3d::encoders::{Cg3dModel, Modality};
use cg3d::geometry::{normalize_unit_sphere, read_point_cloud, SceneCloud};
use cg3d::inference::{
    build_text_bank, cluster_scene, export_embeddings, scene_query, zero_shot_accuracy, zero_shot_classify,
    RetrievalIndex,
};
use cg3d::training::{
    build_vocab, finetune, labeled_clouds, log_to_csv, pretrain_bimodal, probe_image_features, stratified_subset,
    Cg3dTrainer, Checkpoint, FinetuneInit, RunConfig,
};
use cg3d::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::app::QueryResponse;

#[derive(Debug, Parser)]
#[command(name = "cg3d", version, about = "Contrastive 3D pre-training, zero-shot recognition and scene querying")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Common {
    pub fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassSet {
    Seen,
    Unseen,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    #[value(name = "3d")]
    Point,
    #[value(name = "2d")]
    Image,
    Text,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Point => Modality::Point,
            ModalityArg::Image => Modality::Image,
            ModalityArg::Text => Modality::Text,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural triplet corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Put every class in the training split (for stage-0 pre-training).
        #[arg(long)]
        all_seen: bool,
    },
    /// Stage-0 image-text pre-training of the frozen base.
    PretrainBimodal {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// CG3D pre-training of the point encoder and prompts.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Stage-0 checkpoint.
        #[arg(long, required_unless_present = "resume")]
        base: Option<PathBuf>,
        /// Continue from a CG3D checkpoint instead of starting from `--base`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory for periodic checkpoints (see `train.checkpoint_every`).
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Zero-shot accuracy over a corpus split, or the prediction for one cloud.
    Zeroshot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, required_unless_present = "pc")]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "unseen")]
        classes: ClassSet,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Classify this point cloud against `--class` names (or the checkpoint's classes).
        #[arg(long)]
        pc: Option<PathBuf>,
        #[arg(long = "class")]
        class_names: Vec<String>,
    },
    /// Rank corpus records by similarity to a text, point-cloud or image query.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, group = "query")]
        text: Option<String>,
        #[arg(long, group = "query")]
        pc: Option<PathBuf>,
        #[arg(long, group = "query")]
        image: Option<PathBuf>,
        /// Modality of the database embeddings.
        #[arg(long, value_enum, default_value = "3d")]
        database: ModalityArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "all")]
        classes: ClassSet,
        #[arg(long, default_value_t = 5)]
        topk: usize,
    },
    /// Cluster a scene and rank clusters against a text query.
    SceneQuery {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        strip_floor: bool,
        #[arg(long)]
        text: String,
    },
    /// Fine-tune the point encoder with a linear head on a fraction of the training split.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Re-initialize the point encoder instead of using the checkpoint's.
        #[arg(long)]
        from_scratch: bool,
    },
    /// Logistic-regression probe on image embeddings.
    LinearProbe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "unseen")]
        classes: ClassSet,
        /// Use the stage-0 pathway (no prompts).
        #[arg(long)]
        no_prompts: bool,
        #[arg(long, default_value_t = 0.5)]
        train_frac: f64,
    },
    /// Write per-record embeddings as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_values = ["3d", "2d"])]
        modalities: Vec<ModalityArg>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Serve the scene-query HTTP API.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = crate::app::DEFAULT_MAX_POINTS)]
        max_points: usize,
    },
}

fn manifest_path(dir: &Path) -> PathBuf {
    if dir.is_file() {
        dir.to_path_buf()
    } else {
        dir.join("manifest.jsonl")
    }
}

fn load_data(dir: &Path, model: &Cg3dModel<f32>) -> Result<Dataset> {
    let m = Manifest::read(&manifest_path(dir))?;
    Dataset::load(m, &model.vocab, model.config.text_len)
}

fn class_list(m: &Manifest, set: ClassSet) -> Vec<String> {
    match set {
        ClassSet::Seen => m.seen_classes(),
        ClassSet::Unseen => m.header.unseen.clone(),
        ClassSet::All => m.classes().to_vec(),
    }
}

fn pick(m: &Manifest, split: SplitArg, classes: &[String]) -> Vec<usize> {
    match split {
        SplitArg::Train => m.select(Split::Train, classes),
        SplitArg::Test => m.select(Split::Test, classes),
        SplitArg::All => {
            let mut v = m.select(Split::Train, classes);
            v.extend(m.select(Split::Test, classes));
            v.sort_unstable();
            v
        }
    }
}

fn nonempty(idx: Vec<usize>) -> Result<Vec<usize>> {
    if idx.is_empty() {
        Err(Error::invalid("selection matches no records"))
    } else {
        Ok(idx)
    }
}

/// The `scene-query` pipeline; the HTTP `/query` endpoint runs the same steps.
pub fn run_scene_query(
    model: &Cg3dModel<f32>,
    scene: &SceneCloud,
    k: usize,
    seed: u64,
    strip_floor: bool,
    text: &str,
) -> Result<QueryResponse> {
    let set = cluster_scene(scene, k, seed, strip_floor, model)?;
    Ok(QueryResponse {
        query: text.to_string(),
        results: scene_query(&set, text, model)?,
    })
}

/// Executes every command except `serve` and returns its JSON report.
pub fn execute(cmd: &Command) -> Result<Value> {
    match cmd {
        Command::GenData { common, out, all_seen } => {
            let cfg = common.load()?;
            let mut spec = cfg.corpus.clone();
            if *all_seen {
                spec.unseen.clear();
            }
            let m = build_corpus(&spec, out, common.seed)?;
            Ok(json!({
                "manifest": out.join("manifest.jsonl"),
                "records": m.records.len(),
                "train": m.train_indices().len(),
                "classes": m.classes(),
                "unseen": m.header.unseen,
            }))
        }
        Command::PretrainBimodal { common, data, out, log } => {
            let cfg = common.load()?;
            let m = Manifest::read(&manifest_path(data))?;
            let vocab = build_vocab(&m);
            let ds = Dataset::load(m, &vocab, cfg.model.text_len)?;
            let (ck, rows) = pretrain_bimodal(&ds, &cfg.model, &cfg.bimodal, common.seed)?;
            ck.save(out)?;
            if let Some(p) = log {
                let mut csv = String::from("step,loss,lr\n");
                for r in &rows {
                    csv.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
                }
                fs::write(p, csv).map_err(|e| Error::io(p, e))?;
            }
            Ok(json!({
                "checkpoint": out,
                "steps": rows.len(),
                "first_loss": rows.first().map(|r| r.loss),
                "final_loss": rows.last().map(|r| r.loss),
            }))
        }
        Command::Pretrain {
            common,
            data,
            base,
            resume,
            out,
            log,
            checkpoint_dir,
        } => {
            let cfg = common.load()?;
            let mut trainer = match (resume, base) {
                (Some(r), _) => Cg3dTrainer::resume(&Checkpoint::load(r)?, cfg.train.clone())?,
                (None, Some(b)) => Cg3dTrainer::new(&Checkpoint::load(b)?, cfg.train.clone(), common.seed)?,
                (None, None) => return Err(Error::invalid("either --base or --resume is required")),
            };
            let ds = load_data(data, &trainer.model)?;
            trainer.unseen = ds.manifest.header.unseen.clone();
            let pool = nonempty(ds.manifest.train_indices())?;
            let start = trainer.step;
            let rows = trainer.run_until(&ds, &pool, cfg.train.steps, |t| match checkpoint_dir {
                Some(d) => t.checkpoint().save(&d.join(format!("step_{:06}.ckpt", t.step))),
                None => Ok(()),
            })?;
            trainer.checkpoint().save(out)?;
            if let Some(p) = log {
                fs::write(p, log_to_csv(&rows)).map_err(|e| Error::io(p, e))?;
            }
            let l3: Vec<f32> = rows.iter().filter_map(|r| r.loss_3d).collect();
            let lp: Vec<f32> = rows.iter().filter_map(|r| r.loss_p).collect();
            Ok(json!({
                "checkpoint": out,
                "start_step": start,
                "end_step": trainer.step,
                "loss_3d_first": l3.first(),
                "loss_3d_last": l3.last(),
                "loss_p_first": lp.first(),
                "loss_p_last": lp.last(),
            }))
        }
        Command::Zeroshot {
            ckpt,
            data,
            classes,
            split,
            pc,
            class_names,
            ..
        } => {
            let ck = Checkpoint::load(ckpt)?;
            if let Some(p) = pc {
                let names = if class_names.is_empty() { ck.classes.clone() } else { class_names.clone() };
                let bank = build_text_bank(&names, ZERO_SHOT_TEMPLATE, &ck.model)?;
                let cloud = normalize_unit_sphere(&read_point_cloud(p)?);
                let z = zero_shot_classify(&cloud, &bank, &ck.model)?;
                return Ok(json!({ "label": z.label, "index": z.index, "classes": names, "scores": z.scores }));
            }
            let data = data.as_ref().ok_or_else(|| Error::invalid("--data is required"))?;
            let ds = load_data(data, &ck.model)?;
            let names = if class_names.is_empty() { class_list(&ds.manifest, *classes) } else { class_names.clone() };
            let idx = nonempty(pick(&ds.manifest, *split, &names))?;
            let clouds: Vec<_> = idx.iter().map(|&i| ds.cloud(i).clone()).collect();
            let labels: Vec<String> = idx.iter().map(|&i| ds.manifest.classes()[ds.label(i)].clone()).collect();
            let bank = build_text_bank(&names, ZERO_SHOT_TEMPLATE, &ck.model)?;
            let acc = zero_shot_accuracy(&clouds, &labels, &bank, &ck.model)?;
            Ok(json!({ "accuracy": acc, "n": idx.len(), "classes": names, "template": ZERO_SHOT_TEMPLATE }))
        }
        Command::Retrieve {
            ckpt,
            data,
            text,
            pc,
            image,
            database,
            split,
            classes,
            topk,
            ..
        } => {
            let ck = Checkpoint::load(ckpt)?;
            let model = &ck.model;
            let ds = load_data(data, model)?;
            let idx = nonempty(pick(&ds.manifest, *split, &class_list(&ds.manifest, *classes)))?;
            let q = match (text, pc, image) {
                (Some(t), _, _) => model.embed_texts(&[t.as_str()])?,
                (_, Some(p), _) => model.embed_clouds(&[normalize_unit_sphere(&read_point_cloud(p)?)])?,
                (_, _, Some(p)) => model.embed_images(&[read_depth(p)?], true)?,
                _ => return Err(Error::invalid("one of --text, --pc or --image is required")),
            };
            let index = RetrievalIndex::from_dataset(&ds, &idx, model, (*database).into())?;
            let hits = index.query(q.row(0), *topk)?;
            Ok(json!({ "database": Modality::from(*database).as_str(), "size": index.len(), "hits": hits }))
        }
        Command::SceneQuery {
            common,
            ckpt,
            scene,
            k,
            strip_floor,
            text,
        } => {
            let ck = Checkpoint::load(ckpt)?;
            let sc = SceneCloud::new(read_point_cloud(scene)?.points);
            let r = run_scene_query(&ck.model, &sc, *k, common.seed, *strip_floor, text)?;
            Ok(serde_json::to_value(r)?)
        }
        Command::Finetune {
            common,
            ckpt,
            data,
            fraction,
            from_scratch,
        } => {
            let cfg = common.load()?;
            let ck = Checkpoint::load(ckpt)?;
            let ds = load_data(data, &ck.model)?;
            let m = &ds.manifest;
            let classes: Vec<String> = m
                .classes()
                .iter()
                .filter(|c| !m.select(Split::Train, std::slice::from_ref(c)).is_empty())
                .cloned()
                .collect();
            let train_idx = stratified_subset(&ds, &nonempty(m.select(Split::Train, &classes))?, *fraction, common.seed)?;
            let test_idx = nonempty(m.select(Split::Test, &classes))?;
            let init = if *from_scratch { FinetuneInit::Scratch } else { FinetuneInit::Pretrained };
            let out = finetune(
                &ck,
                &classes,
                &labeled_clouds(&ds, &train_idx),
                &labeled_clouds(&ds, &test_idx),
                init,
                &cfg.finetune,
                common.seed,
            )?;
            Ok(json!({
                "init": init,
                "classes": classes,
                "n_train": train_idx.len(),
                "n_test": test_idx.len(),
                "train_accuracy": out.train_accuracy,
                "test_accuracy": out.test_accuracy,
                "final_loss": out.losses.last(),
            }))
        }
        Command::LinearProbe {
            common,
            ckpt,
            data,
            classes,
            no_prompts,
            train_frac,
        } => {
            let cfg = common.load()?;
            let ck = Checkpoint::load(ckpt)?;
            let ds = load_data(data, &ck.model)?;
            let names = class_list(&ds.manifest, *classes);
            let idx = nonempty(pick(&ds.manifest, SplitArg::All, &names))?;
            let p = probe_image_features(&ds, &idx, &ck.model, !*no_prompts, *train_frac, &cfg.probe, common.seed)?;
            Ok(json!({
                "pathway": if *no_prompts { "stage0" } else { "prompted" },
                "classes": names,
                "n_train": p.n_train,
                "n_test": p.n_test,
                "train_accuracy": p.probe.train_accuracy,
                "test_accuracy": p.test_accuracy,
                "iterations": p.probe.iterations,
            }))
        }
        Command::ExportEmbeddings {
            ckpt,
            data,
            out,
            modalities,
            split,
            ..
        } => {
            let ck = Checkpoint::load(ckpt)?;
            let ds = load_data(data, &ck.model)?;
            let idx = nonempty(pick(&ds.manifest, *split, ds.manifest.classes()))?;
            let mods: Vec<Modality> = modalities.iter().map(|&m| m.into()).collect();
            let rows = export_embeddings(&ds, &idx, &ck.model, &mods, true, out)?;
            Ok(json!({ "out": out, "rows": rows }))
        }
        Command::Serve { .. } => Err(Error::invalid("`serve` runs an event loop; use `serve` from the binary")),
    }
}
