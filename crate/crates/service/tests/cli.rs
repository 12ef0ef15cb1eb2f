use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use cg3d::geometry::{compose_scene, generate_shape, write_point_cloud, Placement, PointCloud};
use cg3d::rng::seeded;
use cg3d::training::{parse_log, Checkpoint};
use cg3d_service::{execute, Cli};
use clap::Parser;
use serde_json::{json, Value};

const CONFIG: &str = r#"{
  "model": {"image_size": 16, "patch": 8, "layers": 1, "width": 16, "heads": 2, "embed_dim": 8,
            "n_points": 32, "point_widths": [16, 32], "point_feature": 32, "n_prompt_tokens": 2},
  "corpus": {"classes": ["sphere", "cube", "cone", "torus"], "unseen": ["torus"], "per_class": 6,
             "n_points": 32, "render_points": 64, "image_size": 16, "test_frac": 0.34},
  "bimodal": {"batch_size": 8, "steps": 6},
  "train": {"batch_size": 8, "steps": 6, "checkpoint_every": 2},
  "finetune": {"batch_size": 4, "steps": 3},
  "probe": {"max_iter": 50}
}"#;

fn run(args: &[&str]) -> Value {
    let mut full = vec!["cg3d"];
    full.extend_from_slice(args);
    let cli = Cli::try_parse_from(full).unwrap();
    execute(&cli.command).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("cfg.json"), CONFIG).unwrap();
        Self { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }
}

fn common(cfg: &str) -> [&str; 4] {
    ["--config", cfg, "--seed", "1"]
}

fn pipeline(f: &Fixture) {
    let cfg = f.p("cfg.json");
    let c = common(&cfg);
    let v = run(&[&["gen-data"][..], &c, &["--out", &f.p("stage0"), "--all-seen"]].concat());
    assert_eq!(v["records"], 24);
    assert_eq!(v["unseen"], json!([]));
    let v = run(&[&["gen-data"][..], &c, &["--out", &f.p("data")]].concat());
    assert_eq!(v["unseen"], json!(["torus"]));
    let v = run(&[&["pretrain-bimodal"][..], &c, &["--data", &f.p("stage0"), "--out", &f.p("base.ckpt"), "--log", &f.p("s0.csv")]].concat());
    assert_eq!(v["steps"], 6);
    let v = run(&[
        &["pretrain"][..],
        &c,
        &["--data", &f.p("data"), "--base", &f.p("base.ckpt"), "--out", &f.p("cg3d.ckpt"), "--log", &f.p("log.csv")],
        &["--checkpoint-dir", &f.p("ckpts")],
    ]
    .concat());
    assert_eq!(v["end_step"], 6);
}

#[test]
fn end_to_end_commands() {
    let f = Fixture::new();
    pipeline(&f);
    let cfg = f.p("cfg.json");
    let c = common(&cfg);

    let log = parse_log(&std::fs::read_to_string(f.p("log.csv")).unwrap()).unwrap();
    assert_eq!(log.len(), 6);
    assert!(log[0].loss_3d.is_some() && log[1].loss_p.is_some());
    let ck = Checkpoint::load(Path::new(&f.p("cg3d.ckpt"))).unwrap();
    assert_eq!(ck.step, 6);
    assert_eq!(std::fs::read_dir(f.p("ckpts")).unwrap().count(), 3);

    let v = run(&[&["zeroshot"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--data", &f.p("data")]].concat());
    assert_eq!(v["classes"], json!(["torus"]));
    assert_eq!(v["accuracy"], 1.0);
    let v = run(&[&["zeroshot"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--data", &f.p("data"), "--classes", "all"]].concat());
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let sphere = generate_shape("sphere", 40, &mut seeded(3)).unwrap();
    write_point_cloud(Path::new(&f.p("sphere.pcld")), &sphere).unwrap();
    let v = run(&[&["zeroshot"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--pc", &f.p("sphere.pcld"), "--class", "sphere", "--class", "cube"]].concat());
    let scores: Vec<f64> = serde_json::from_value(v["scores"].clone()).unwrap();
    assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let v = run(&[&["retrieve"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--data", &f.p("data"), "--text", "this is a cube", "--topk", "100"]].concat());
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len() as u64, v["size"].as_u64().unwrap());
    assert!(hits.windows(2).all(|w| w[0]["similarity"].as_f64() >= w[1]["similarity"].as_f64()));
    let v = run(&[&["retrieve"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--data", &f.p("data"), "--pc", &f.p("sphere.pcld"), "--database", "2d"]].concat());
    assert_eq!(v["database"], "2d");
    assert_eq!(v["hits"].as_array().unwrap().len(), 5);

    let v = run(&[&["finetune"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--data", &f.p("data"), "--fraction", "0.5"]].concat());
    assert_eq!(v["classes"], json!(["sphere", "cube", "cone"]));
    assert_eq!(v["n_train"], 6);
    let v = run(&[&["finetune"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--data", &f.p("data"), "--from-scratch"]].concat());
    assert_eq!(v["init"], "scratch");

    let v = run(&[&["linear-probe"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--data", &f.p("data"), "--classes", "seen", "--no-prompts"]].concat());
    assert_eq!(v["pathway"], "stage0");
    assert_eq!(v["n_train"].as_u64().unwrap() + v["n_test"].as_u64().unwrap(), 18);

    let v = run(&[&["export-embeddings"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--data", &f.p("data"), "--out", &f.p("emb.csv")]].concat());
    assert_eq!(v["rows"], 48);
    let csv = std::fs::read_to_string(f.p("emb.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "id,class,modality,e0,e1,e2,e3,e4,e5,e6,e7");
    assert_eq!(lines.len(), 49);
    for l in &lines[1..] {
        let norm: f64 = l.split(',').skip(3).map(|x| x.parse::<f64>().unwrap().powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
    let ids: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] <= w[1]));

    let objs = vec![
        (generate_shape("sphere", 60, &mut seeded(1)).unwrap(), Placement::at([0.0, 0.0, 0.0], 1.0)),
        (generate_shape("cube", 60, &mut seeded(2)).unwrap(), Placement::at([8.0, 0.0, 0.0], 1.0)),
    ];
    let scene = compose_scene(&objs, false).unwrap();
    write_point_cloud(Path::new(&f.p("scene.pcld")), &PointCloud::new(scene.points).unwrap()).unwrap();
    let a = run(&[&["scene-query"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--scene", &f.p("scene.pcld"), "--k", "2", "--text", "this is a sphere"]].concat());
    let b = run(&[&["scene-query"][..], &c, &["--ckpt", &f.p("cg3d.ckpt"), "--scene", &f.p("scene.pcld"), "--k", "2", "--text", "this is a sphere"]].concat());
    assert_eq!(a, b);
    assert_eq!(a["results"].as_array().unwrap().len(), 2);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let f = Fixture::new();
    pipeline(&f);
    let cfg = f.p("cfg.json");
    let c = common(&cfg);
    run(&[
        &["pretrain"][..],
        &c,
        &["--data", &f.p("data"), "--resume", &f.p("ckpts/step_000004.ckpt"), "--out", &f.p("resumed.ckpt"), "--log", &f.p("tail.csv")],
    ]
    .concat());
    let full = parse_log(&std::fs::read_to_string(f.p("log.csv")).unwrap()).unwrap();
    let tail = parse_log(&std::fs::read_to_string(f.p("tail.csv")).unwrap()).unwrap();
    assert_eq!(&full[4..], &tail[..]);
    let a = std::fs::read(f.p("cg3d.ckpt")).unwrap();
    let b = std::fs::read(f.p("resumed.ckpt")).unwrap();
    assert_eq!(Checkpoint::decode(&a).unwrap().checksums(), Checkpoint::decode(&b).unwrap().checksums());
}

#[test]
fn binary_reports_errors_and_json() {
    let exe = env!("CARGO_BIN_EXE_cg3d");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = Proc::new(exe)
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .args(["--seed", "2", "--out"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["records"], 24);

    let out = Proc::new(exe)
        .args(["zeroshot", "--ckpt"])
        .arg(dir.path().join("missing.ckpt"))
        .args(["--data"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));

    let out = Proc::new(exe).args(["pretrain", "--data", "x", "--out", "y"]).output().unwrap();
    assert!(!out.status.success());
}
