mod common;

use common::{cli, csv_rows, stderr, tiny, write_tiny};
use tripartite::checkpoint::Checkpoint;
use tripartite::commands::{
    cmd_ablate, cmd_eval, cmd_human_align, cmd_noise_sweep, cmd_trace, cmd_train, evaluate_run, parse_axis,
    checkpoint_overrides, CHECKPOINT_FILE,
};
use tripartite::datasets::{eval_set, read_human_probs};
use tripartite_core::data::encode_records;

fn trained(dir: &std::path::Path) -> Checkpoint {
    cmd_train(&tiny(), &[], dir).unwrap();
    Checkpoint::load(&dir.join(CHECKPOINT_FILE)).unwrap()
}

#[test]
fn train_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = cmd_train(&tiny(), &[], tmp.path()).unwrap();
    assert_eq!(runs.len(), 1);
    for f in ["config.cfg", "metrics.jsonl", CHECKPOINT_FILE, "eval.json", "samples.csv", "ticks.csv"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let echoed = std::fs::read_to_string(tmp.path().join("config.cfg")).unwrap();
    assert!(echoed.starts_with("# format_version=1 seed=9\n"));
    assert_eq!(tripartite::ExperimentConfig::parse(&echoed).unwrap(), tiny());
    let line = std::fs::read_to_string(tmp.path().join("metrics.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(rec["format_version"], 1);
    assert_eq!(rec["seed"], 9);
    assert_eq!(rec["epoch"], 1);
    let (header, rows) = csv_rows(&tmp.path().join("samples.csv"));
    assert_eq!(header[0], "index");
    assert_eq!(rows.len(), 20);
}

#[test]
fn training_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_train(&tiny(), &[], a.path()).unwrap();
    cmd_train(&tiny(), &[], b.path()).unwrap();
    for f in ["config.cfg", "metrics.jsonl", CHECKPOINT_FILE, "eval.json", "samples.csv", "ticks.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn echoed_config_reproduces_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_train(&tiny(), &[], a.path()).unwrap();
    let echoed = tripartite::ExperimentConfig::load(&a.path().join("config.cfg")).unwrap();
    cmd_train(&echoed, &[], b.path()).unwrap();
    assert_eq!(
        std::fs::read(a.path().join("metrics.jsonl")).unwrap(),
        std::fs::read(b.path().join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = cmd_train(&tiny(), &[], tmp.path()).unwrap();
    let ckpt = Checkpoint::load(&tmp.path().join(CHECKPOINT_FILE)).unwrap();
    for ((na, a), (nb, b)) in runs[0].model.params.iter().zip(ckpt.model.params.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.shape(), b.shape());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{na}");
    }
    assert_eq!(ckpt.epoch, 1);
    assert_eq!(ckpt.metrics, runs[0].metrics);
    let cfg = tiny();
    let ds = eval_set(&cfg).unwrap();
    let before = evaluate_run(&runs[0].model, &ds, &cfg.train.policy, true, 8, 9).unwrap();
    let after = evaluate_run(&ckpt.model, &ds, &cfg.train.policy, true, 8, 9).unwrap();
    assert_eq!(before, after);
    assert_eq!(ckpt.to_bytes().unwrap(), std::fs::read(tmp.path().join(CHECKPOINT_FILE)).unwrap());
}

#[test]
fn corrupt_checkpoints_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let bytes = ckpt.to_bytes().unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[4] = 9;
    let err = Checkpoint::from_bytes(&bad).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn replicates_write_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = cmd_train(&tiny(), &[1, 2], tmp.path()).unwrap();
    assert_eq!(runs.len(), 2);
    assert!(tmp.path().join("seed_1").join(CHECKPOINT_FILE).exists());
    assert!(tmp.path().join("seed_2").join(CHECKPOINT_FILE).exists());
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["seeds"], serde_json::json!([1, 2]));
    let accs = [runs[0].eval.accuracy, runs[1].eval.accuracy];
    let mean = (accs[0] + accs[1]) / 2.0;
    assert!((s["accuracy_mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    let std = ((accs[0] - mean).powi(2) + (accs[1] - mean).powi(2)).sqrt();
    assert!((s["accuracy_std"].as_f64().unwrap() - std).abs() < 1e-12);
}

#[test]
fn eval_with_t_min_at_t_max_runs_every_tick() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(&tmp.path().join("run"));
    let mut cfg = ckpt.config.clone();
    checkpoint_overrides(&mut cfg, &["policy.t_min=5"]).unwrap();
    let run = cmd_eval(&ckpt, &cfg, &tmp.path().join("eval")).unwrap();
    assert_eq!(run.summary.mean_stop_tick, 5.0);
    assert!(run.samples.iter().all(|s| s.stop_tick == 5));
}

#[test]
fn eval_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(&tmp.path().join("run"));
    cmd_eval(&ckpt, &ckpt.config, &tmp.path().join("a")).unwrap();
    cmd_eval(&ckpt, &ckpt.config, &tmp.path().join("b")).unwrap();
    for f in ["eval.json", "samples.csv", "ticks.csv"] {
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(f)).unwrap(),
            std::fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn eval_rejects_class_mismatch_and_model_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let mut cfg = ckpt.config.clone();
    let err = checkpoint_overrides(&mut cfg, &["model.neurons=32"]).unwrap_err();
    assert!(err.to_string().contains("model.neurons"));
    let mut cfg = ckpt.config.clone();
    cfg.train.model.classes = 4;
    let err = cmd_eval(&ckpt, &cfg, &tmp.path().join("eval")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("classes"), "{err}");
}

#[test]
fn tick_aggregates_count_active_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let run = cmd_eval(&ckpt, &ckpt.config, &tmp.path().join("eval")).unwrap();
    for (t, a) in run.ticks.iter().enumerate() {
        let running = run.samples.iter().filter(|s| s.stop_tick > t).count();
        assert_eq!(a.active, running, "tick {}", t + 1);
    }
    let (_, rows) = csv_rows(&tmp.path().join("eval").join("ticks.csv"));
    assert_eq!(rows.len(), run.ticks.len());
}

#[test]
fn noise_sweep_zero_matches_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let run = cmd_eval(&ckpt, &ckpt.config, &tmp.path().join("eval")).unwrap();
    let rows = cmd_noise_sweep(&ckpt, &ckpt.config, &[0.0], &tmp.path().join("sweep")).unwrap();
    assert_eq!(rows[0].accuracy, run.summary.accuracy);
    assert_eq!(rows[0].mean_stop_tick, run.summary.mean_stop_tick);
    assert_eq!(rows[0].mean_certainty, run.summary.mean_certainty);
}

#[test]
fn noise_sweep_table_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let out = tmp.path().join("sweep");
    cmd_noise_sweep(&ckpt, &ckpt.config, &[0.0, 0.1, 0.25, 0.5], &out).unwrap();
    let (header, rows) = csv_rows(&out.join("sweep.csv"));
    assert_eq!(header, ["sigma", "accuracy", "mean_stop_tick", "mean_certainty"]);
    assert_eq!(rows.len(), 4);
    let err = cmd_noise_sweep(&ckpt, &ckpt.config, &[0.1, -0.2], &out).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn ablation_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let axis = parse_axis("oscillation=off/on", &cfg).unwrap();
    assert_eq!(axis.key, "flags.oscillation");
    let cells = cmd_ablate(&cfg, &[axis], &[], tmp.path()).unwrap();
    assert_eq!(cells.len(), 2);
    let (header, rows) = csv_rows(&tmp.path().join("ablate.csv"));
    assert_eq!(header[1], "flags.oscillation");
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][1], "off");
    assert_eq!(rows[1][1], "on");
    let (_, summary) = csv_rows(&tmp.path().join("ablate_summary.csv"));
    assert_eq!(summary.len(), 2);
    assert!(parse_axis("oscilation=off/on", &cfg).is_err());
    assert!(parse_axis("data.seed=1/2", &cfg).is_err());
    assert!(parse_axis("flags.sda=off/sideways", &cfg).is_err());
}

#[test]
fn ablation_cells_share_data_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let axis = parse_axis("D=16/20", &cfg).unwrap();
    assert_eq!(axis.key, "model.neurons");
    let cells = cmd_ablate(&cfg, &[axis], &[5], tmp.path()).unwrap();
    assert_eq!(cells.len(), 2);
    let a = tripartite::ExperimentConfig::load(&tmp.path().join("cell_0/seed_5/config.cfg")).unwrap();
    let b = tripartite::ExperimentConfig::load(&tmp.path().join("cell_1/seed_5/config.cfg")).unwrap();
    assert_eq!(a.train.seed, b.train.seed);
    assert_eq!(a.data, b.data);
    assert_eq!(a.train.model.neurons, 16);
    assert_eq!(b.train.model.neurons, 20);
}

#[test]
fn trace_files() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let out = tmp.path().join("trace");
    let trace = cmd_trace(&ckpt, &ckpt.config, &[3], &out).unwrap();
    assert_eq!(trace.ticks.len(), 5);
    let (header, att) = csv_rows(&out.join("attention.csv"));
    assert_eq!(att.len(), 5);
    assert_eq!(header.len(), 2 + 4, "16x16 input gives a 2x2 grid");
    for row in &att {
        let sum: f64 = row[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9, "{sum}");
    }
    let (header, act) = csv_rows(&out.join("activation.csv"));
    assert_eq!(act.len(), 5);
    assert_eq!(header.len(), 2 + 16);
    let (header, coh) = csv_rows(&out.join("coherence.csv"));
    assert_eq!(header[2], "coherence");
    assert_eq!(coh.len(), 5);
    for row in &coh {
        let c: f64 = row[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&c), "{c}");
    }
    let err = cmd_trace(&ckpt, &ckpt.config, &[20], &out).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn trace_without_oscillation_leaves_coherence_blank() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.set("flags.oscillation", "off").unwrap();
    cmd_train(&cfg, &[], tmp.path()).unwrap();
    let ckpt = Checkpoint::load(&tmp.path().join(CHECKPOINT_FILE)).unwrap();
    let out = tmp.path().join("trace");
    cmd_trace(&ckpt, &ckpt.config, &[0, 1], &out).unwrap();
    let (_, coh) = csv_rows(&out.join("coherence.csv"));
    assert_eq!(coh.len(), 10);
    assert!(coh.iter().all(|r| r[2].is_empty()));
}

fn write_probs(path: &std::path::Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    std::fs::write(path, format!("# human label distribution\n{text}")).unwrap();
}

#[test]
fn human_align_self_agreement_and_null() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(&tmp.path().join("run"));
    let run = cmd_eval(&ckpt, &ckpt.config, &tmp.path().join("eval")).unwrap();
    // Rows whose top probability is the model's own certainty.
    let rows: Vec<Vec<f64>> = run
        .samples
        .iter()
        .map(|s| {
            let c = 1.0 / 3.0 + s.certainty * (2.0 / 3.0);
            vec![c, (1.0 - c) / 2.0, (1.0 - c) / 2.0]
        })
        .collect();
    let probs = tmp.path().join("self.csv");
    write_probs(&probs, &rows);
    assert_eq!(read_human_probs(&probs).unwrap(), rows);
    let mut cfg = ckpt.config.clone();
    cfg.data.human_probs = Some(probs);
    let s = cmd_human_align(&ckpt, &cfg, &tmp.path().join("align")).unwrap();
    assert!(s.r > 0.999, "{}", s.r);
    let (_, out) = csv_rows(&tmp.path().join("align").join("align.csv"));
    assert_eq!(out.len(), 20);

    // Permutation null on a larger set: independent rows give a small |r|.
    let mut cfg = ckpt.config.clone();
    cfg.data.val_samples = 300;
    let ds = eval_set(&cfg).unwrap();
    let policy = cfg.train.policy;
    let run = evaluate_run(&ckpt.model, &ds, &policy, true, 50, 0).unwrap();
    let mut rows: Vec<Vec<f64>> = run
        .samples
        .iter()
        .map(|s| {
            let c = 1.0 / 3.0 + s.certainty * (2.0 / 3.0);
            vec![c, (1.0 - c) / 2.0, (1.0 - c) / 2.0]
        })
        .collect();
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    rows.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(11));
    let probs = tmp.path().join("shuffled.csv");
    write_probs(&probs, &rows);
    cfg.data.human_probs = Some(probs);
    let s = cmd_human_align(&ckpt, &cfg, &tmp.path().join("null")).unwrap();
    assert!(s.r.abs() < 0.2, "{}", s.r);
}

#[test]
fn human_align_needs_human_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained(tmp.path());
    let err = cmd_human_align(&ckpt, &ckpt.config, &tmp.path().join("align")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("data.human_probs"));
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "0.5,0.5\n").unwrap();
    let mut cfg = ckpt.config.clone();
    cfg.data.human_probs = Some(bad);
    let err = cmd_human_align(&ckpt, &cfg, &tmp.path().join("align")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn binary_records_train_and_stay_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let train = tripartite::datasets::train_set(&cfg).unwrap();
    let test = eval_set(&cfg).unwrap();
    let (tf, vf) = (tmp.path().join("train.bin"), tmp.path().join("test.bin"));
    std::fs::write(&tf, encode_records(&train)).unwrap();
    std::fs::write(&vf, encode_records(&test)).unwrap();
    let before = std::fs::read(&tf).unwrap();
    let mut bin = cfg.clone();
    bin.apply_overrides(&[
        "data.source=binary".to_string(),
        format!("data.train_file={}", tf.display()),
        format!("data.test_file={}", vf.display()),
    ])
    .unwrap();
    let runs = cmd_train(&bin, &[], &tmp.path().join("run")).unwrap();
    assert_eq!(runs[0].eval.samples, 20);
    assert_eq!(std::fs::read(&tf).unwrap(), before);
}

#[test]
fn binary_source_needs_files() {
    let mut cfg = tiny();
    cfg.set("data.source", "binary").unwrap();
    let err = tripartite::datasets::train_set(&cfg).unwrap_err();
    assert!(err.to_string().contains("data.train_file"));
    cfg.set("data.train_file", "/nonexistent/data_batch_1.bin").unwrap();
    let err = tripartite::datasets::train_set(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("1 label byte"), "{err}");
}

#[test]
fn binary_zero_epochs_writes_checkpoint_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_tiny(tmp.path());
    let out = tmp.path().join("zero");
    let o = cli(
        &["train", "--config", cfg_path.to_str().unwrap(), "--set", "train.epochs=0", "--out", out.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap(), "");
    let ckpt = Checkpoint::load(&out.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.epoch, 0);
    let fresh = tripartite_core::Model::new(ckpt.config.train.model.clone()).unwrap();
    assert_eq!(fresh.params, ckpt.model.params);
}

#[test]
fn binary_unknown_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cli(&["train", "--set", "trian.epochs=1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trian.epochs"), "{}", stderr(&o));
}

#[test]
fn binary_missing_data_exits_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_tiny(tmp.path());
    let o = cli(
        &[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--set",
            "data.source=binary",
            "--set",
            "data.train_file=/nonexistent/train.bin",
            "--set",
            "data.test_file=/nonexistent/test.bin",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("Expected concatenated records"), "{}", stderr(&o));
}

#[test]
fn binary_commands_use_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_tiny(tmp.path());
    let o = cli(&["train", "--config", cfg_path.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = tmp.path().join("tiny/train").join(CHECKPOINT_FILE);
    assert!(ckpt.exists());
    let c = ckpt.to_str().unwrap();
    for args in [
        vec!["eval", "--checkpoint", c],
        vec!["noise-sweep", "--checkpoint", c, "--sigmas", "0,0.5"],
        vec!["trace", "--checkpoint", c, "--samples", "0,1"],
    ] {
        let o = cli(&args, tmp.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    assert!(tmp.path().join("tiny/eval/eval.json").exists());
    assert!(tmp.path().join("tiny/noise-sweep/sweep.csv").exists());
    assert!(tmp.path().join("tiny/trace/attention.csv").exists());
    let o = cli(&["noise-sweep", "--checkpoint", c, "--sigmas", "-1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["eval", "--checkpoint", c, "--set", "flags.sda=off"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["human-align", "--checkpoint", c], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}
