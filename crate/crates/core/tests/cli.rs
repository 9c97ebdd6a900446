use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mlbvae::cli::{compare_table, config_diff, score_rows, CompareSection, RunConfig};
use mlbvae::dataio::{generate_synthetic, write_f32_le, write_u8, Dataset, SyntheticSpec};
use mlbvae::mlmetrics::{EvalBatch, MetricsReport};
use mlbvae::rankstats::ScoresTable;
use mlbvae::roipool::{Hemisphere, RoiTable, VoxelInfo};
use mlbvae::Checkpoint32;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mlbvae"));
    c.env_remove("MLBVAE_RUN_ROOT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_samples: 120,
        view_dim: 10,
        n_labels: 5,
        latent_dim: 3,
        n_groups: 2,
        density: 0.3,
        seed: 4,
        ..SyntheticSpec::default()
    }
}

const TINY: &[&str] = &[
    "--set",
    "bvae.hidden=[12]",
    "--set",
    "bvae.latent_dim=4",
    "--set",
    "train.epochs=3",
    "--set",
    "train.batch_size=32",
    "--set",
    "train.learning_rate=0.001",
    "--set",
    "data.split={\"scheme\":\"kfold\",\"k\":4}",
];

fn tiny_dataset(dir: &Path) -> PathBuf {
    let (ds, _) = generate_synthetic(&tiny_spec()).unwrap();
    let out = dir.join("data");
    ds.write(&out).unwrap();
    out
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", p(data), "--out", p(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    run(&args)
}

/// Two ROIs per hemisphere, 2×2×2 voxels each.
fn small_table() -> RoiTable {
    let mut voxels = Vec::new();
    for (h_idx, h) in [Hemisphere::Left, Hemisphere::Right].into_iter().enumerate() {
        for r in 0..2u32 {
            for x in 0..2 {
                for y in 0..2 {
                    for z in 0..2 {
                        voxels.push(VoxelInfo {
                            voxel_id: voxels.len(),
                            roi_id: h_idx as u32 * 10 + r,
                            hemisphere: h,
                            coord: [x + 3 * r, y, z],
                        });
                    }
                }
            }
        }
    }
    RoiTable { voxels }
}

#[test]
fn preprocess_rejects_non_cube_n_roif() {
    let dir = tempfile::tempdir().unwrap();
    let table = small_table();
    std::fs::write(dir.path().join("rois.csv"), table.to_text()).unwrap();
    write_f32_le(&dir.path().join("act.f32"), &vec![1.0; 3 * table.n_voxels()]).unwrap();
    write_u8(&dir.path().join("y.u8"), &[0, 1, 1, 0, 1, 1]).unwrap();
    let o = run(&[
        "preprocess",
        "--voxels",
        p(&dir.path().join("act.f32")),
        "--rois",
        p(&dir.path().join("rois.csv")),
        "--labels",
        p(&dir.path().join("y.u8")),
        "--n-roif",
        "10",
        "--out",
        p(&dir.path().join("out")),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn preprocess_constant_activity_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let table = small_table();
    let text = table.to_text();
    std::fs::write(dir.path().join("rois.csv"), &text).unwrap();
    let n = 3;
    write_f32_le(&dir.path().join("act.f32"), &vec![2.5; n * table.n_voxels()]).unwrap();
    write_f32_le(&dir.path().join("r.f32"), &[0.2, 0.7, 0.5, 0.9, 0.1, 0.6]).unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "preprocess",
        "--voxels",
        p(&dir.path().join("act.f32")),
        "--rois",
        p(&dir.path().join("rois.csv")),
        "--ratings",
        p(&dir.path().join("r.f32")),
        "--threshold",
        "0.5",
        "--n-roif",
        "8",
        "--keep-raw",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ds = Dataset::read(&out).unwrap();
    assert_eq!(ds.width(), 16);
    assert!(ds.left.iter().chain(&ds.right).all(|&v| v == 2.5));
    assert_eq!(ds.labels, vec![0, 1, 0, 1, 0, 1]);
    assert_eq!(ds.meta.n_roif, Some(8));
    assert_eq!(ds.meta.threshold, Some(0.5));
    let want: String = {
        use sha2::{Digest, Sha256};
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    };
    assert_eq!(ds.meta.atlas_hash.as_deref(), Some(want.as_str()));
    assert_eq!(ds.raw.as_ref().map(|r| r.dim), Some(16));
}

#[test]
fn synthesize_voxels_then_preprocess() {
    let dir = tempfile::tempdir().unwrap();
    let vox = dir.path().join("vox");
    let o = run(&[
        "synthesize",
        "--voxel-rois",
        "3",
        "--roi-side",
        "4",
        "--set",
        "synthetic.n_samples=40",
        "--out",
        p(&vox),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("pooled");
    let o = run(&[
        "preprocess",
        "--voxels",
        p(&vox.join("activity.f32")),
        "--rois",
        p(&vox.join("rois.csv")),
        "--labels",
        p(&vox.join("labels.u8")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ds = Dataset::read(&out).unwrap();
    assert_eq!((ds.n_samples(), ds.width(), ds.n_labels()), (40, 24, 27));
}

#[test]
fn train_is_deterministic_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&data, out, &["--seed", "11"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ca = std::fs::read(a.join("checkpoint.bin")).unwrap();
    assert_eq!(ca, std::fs::read(b.join("checkpoint.bin")).unwrap());
    for f in ["config.json", "mask.txt", "split.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let echoed = RunConfig::from_json(&std::fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed.train.seed, 11);
    assert_eq!(echoed.train.epochs, 3);
    let log = std::fs::read_to_string(a.join("train.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch=")).count(), 3);
    let ck = Checkpoint32::read(&a.join("checkpoint.bin")).unwrap();
    assert_eq!(ck.epochs_completed, 3);

    // Run directories are append-only.
    let o = train(&data, &a, &["--seed", "11"]);
    assert_eq!(code(&o), 2);
    let o = train(&data, &a, &["--seed", "11", "--overwrite"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(a.join("checkpoint.bin")).unwrap(), ca);
}

#[test]
fn pure_discriminative_run_completes() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let out = dir.path().join("lam0");
    let o = train(&data, &out, &["--lambda-ratio", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = RunConfig::from_json(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!((cfg.train.lambda1, cfg.train.lambda2), (0.0, 1.0));
}

#[test]
fn divergence_leaves_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let out = dir.path().join("nan");
    let o = train(&data, &out, &["--set", "train.learning_rate=1e30", "--set", "train.weight_decay=0"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("checkpoint.bin").exists());
    let ck = Checkpoint32::read(&out.join("checkpoint.last_good.bin")).unwrap();
    assert!(ck.model.store.iter().all(|p| p.value.is_finite()));
    assert!(std::fs::read_to_string(out.join("train.log")).unwrap().contains("aborted_unix="));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let o = train(&data, &dir.path().join("x"), &["--set", "train.learn_rate=1"]);
    assert_eq!(code(&o), 2);
    std::fs::write(dir.path().join("c.json"), r#"{"bvae": {"latent": 3}}"#).unwrap();
    let o = train(&data, &dir.path().join("y"), &["--config", p(&dir.path().join("c.json"))]);
    assert_eq!(code(&o), 2);
    let o = train(&data, &dir.path().join("z"), &["--variant", "no_such_thing"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn default_run_root_comes_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let root = dir.path().join("runs");
    let mut args = vec!["train", "--data", p(&data), "--seed", "5"];
    args.extend_from_slice(TINY);
    let o = bin().env("MLBVAE_RUN_ROOT", &root).args(&args).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("train-seed5").join("checkpoint.bin").exists());
}

#[test]
fn evaluate_matches_library_and_oracle_scores() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let run_dir = dir.path().join("run");
    assert_eq!(code(&train(&data, &run_dir, &[])), 0);
    let ck = run_dir.join("checkpoint.bin");

    // infer + evaluate --predictions equals evaluate --checkpoint.
    let pred = dir.path().join("pred");
    let o = run(&["infer", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&pred)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ev1 = dir.path().join("ev1");
    let ev2 = dir.path().join("ev2");
    assert_eq!(code(&run(&["evaluate", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&ev1)])), 0);
    assert_eq!(code(&run(&["evaluate", "--predictions", p(&pred), "--data", p(&data), "--out", p(&ev2)])), 0);
    let m1 = std::fs::read_to_string(ev1.join("metrics.json")).unwrap();
    assert_eq!(m1, std::fs::read_to_string(ev2.join("metrics.json")).unwrap());
    let parsed: MetricsReport = serde_json::from_str(&m1).unwrap();
    let _: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev1.join("baseline.json")).unwrap()).unwrap();

    // Plumbing identity with a direct library call.
    let ds = Dataset::read(&data).unwrap();
    let preds = mlbvae::cli::Predictions::read(&pred).unwrap();
    let labels: Vec<u8> = preds.rows.iter().flat_map(|&i| ds.label_row(i).to_vec()).collect();
    let direct = MetricsReport::compute(&EvalBatch::new(preds.rows.len(), 5, preds.scores.clone(), labels).unwrap());
    assert_eq!(parsed, direct);
    assert_eq!(score_rows(&ds, &preds.rows, preds.scores.clone(), 0.5).unwrap(), direct);

    // Injected oracle scores: the labels themselves.
    let oracle = mlbvae::cli::Predictions {
        scores: preds.rows.iter().flat_map(|&i| ds.label_row(i).iter().map(|&y| f64::from(y))).collect(),
        ..preds
    };
    let inj = dir.path().join("oracle");
    std::fs::create_dir_all(&inj).unwrap();
    oracle.write(&inj).unwrap();
    let ev3 = dir.path().join("ev3");
    assert_eq!(code(&run(&["evaluate", "--predictions", p(&inj), "--data", p(&data), "--out", p(&ev3)])), 0);
    let m: MetricsReport = serde_json::from_str(&std::fs::read_to_string(ev3.join("metrics.json")).unwrap()).unwrap();
    assert_eq!((m.one_error, m.ranking_loss), (Some(0.0), Some(0.0)));
    assert_eq!((m.micro_f1, m.macro_f1, m.example_ap, m.mean_ap), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
}

#[test]
fn evaluate_rejects_mismatched_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let run_dir = dir.path().join("run");
    assert_eq!(code(&train(&data, &run_dir, &[])), 0);
    let other = dir.path().join("other");
    let (ds, _) = generate_synthetic(&SyntheticSpec {
        view_dim: 11,
        ..tiny_spec()
    })
    .unwrap();
    ds.write(&other).unwrap();
    let o = run(&[
        "evaluate",
        "--checkpoint",
        p(&run_dir.join("checkpoint.bin")),
        "--data",
        p(&other),
        "--out",
        p(&dir.path().join("ev")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ablate_variants_differ_in_one_key() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_dataset(dir.path());
    let out = dir.path().join("abl");
    let mut args = vec!["ablate", "--data", p(&data), "--out", p(&out), "--variant", "full", "--variant", "no_mask"];
    args.extend_from_slice(TINY);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = RunConfig::from_json(&std::fs::read_to_string(out.join("full/config.json")).unwrap()).unwrap();
    let b = RunConfig::from_json(&std::fs::read_to_string(out.join("no_mask/config.json")).unwrap()).unwrap();
    assert_eq!(config_diff(&a, &b), vec!["train.ablation".to_string()]);
    let tsv = std::fs::read_to_string(out.join("ablation.tsv")).unwrap();
    let header: Vec<&str> = tsv.lines().next().unwrap().split('\t').collect();
    assert_eq!(&header[1..], &MetricsReport::KEYS);
    assert_eq!(tsv.lines().count(), 4);
    for line in tsv.lines().skip(1) {
        assert_eq!(line.split('\t').count(), 7);
    }
}

#[test]
fn compare_reports() {
    let dir = tempfile::tempdir().unwrap();
    // 6 algorithms × 13 subjects.
    let mut text = String::from("A B C D E F\n");
    for i in 0..13 {
        let row: Vec<String> = (0..6).map(|j| format!("{}", ((i * 7 + j * 5) % 11) as f64 / 10.0 + j as f64 * 0.01)).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    let path = dir.path().join("scores.txt");
    std::fs::write(&path, &text).unwrap();
    let out = dir.path().join("cmp");
    let o = run(&["compare", "--scores", p(&path), "--control", "A", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    assert!((v["cd"].as_f64().unwrap() - 1.890).abs() < 1e-3);
    let d: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("cd_diagram.json")).unwrap()).unwrap();
    assert_eq!(d["control"], "A");

    // One subject: runs, with a warning.
    let single = dir.path().join("single.txt");
    std::fs::write(&single, "x y\n0.4 0.6\n").unwrap();
    let o = run(&["compare", "--scores", p(&single), "--out", p(&dir.path().join("c1"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("N = 1"));

    // Identical columns: perfect ties.
    let tied = ScoresTable::parse("x y z\n0.5 0.5 0.5\n0.2 0.2 0.2\n").unwrap();
    let r = compare_table(&tied, None, &CompareSection::default()).unwrap();
    assert_eq!(r.fully_tied_rows, 2);
    assert!(r.warnings.iter().any(|w| w.contains("perfect-tie")));

    // Fewer than two algorithms.
    let one = dir.path().join("one.txt");
    std::fs::write(&one, "x\n0.4\n0.5\n").unwrap();
    let o = run(&["compare", "--scores", p(&one), "--out", p(&dir.path().join("c2"))]);
    assert_ne!(code(&o), 0);
    let o = run(&["compare", "--scores", p(&path), "--control", "Q", "--out", p(&dir.path().join("c3"))]);
    assert_eq!(code(&o), 2);
}
