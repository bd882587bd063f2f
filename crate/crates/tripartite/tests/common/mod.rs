#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use tripartite::ExperimentConfig;

pub const TINY: &str = "\
name = tiny
model.image_size = 16
model.classes = 3
model.backbone_widths = 4,6
model.feature_dim = 8
model.key_dim = 8
model.value_dim = 8
model.neurons = 16
model.sync_pairs = 24
model.memory_len = 4
model.gamma_hidden = 8
model.omega_hidden = 6
model.deep_width = 12
model.dropout = 0.0
model.init_seed = 3
model.pair_seed = 4
policy.t_min = 2
policy.t_max = 5
policy.window = 1
policy.epsilon = 0.05
policy.tau = 0.4
train.epochs = 1
train.batch_size = 10
train.seed = 9
data.train_samples = 30
data.val_samples = 20
eval.batch_size = 8
";

pub fn tiny() -> ExperimentConfig {
    ExperimentConfig::parse(TINY).unwrap()
}

pub fn write_tiny(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.cfg");
    std::fs::write(&p, TINY).unwrap();
    p
}

pub fn cli(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tripartite"))
        .args(args)
        .env("TRIPARTITE_OUT", out_root)
        .output()
        .unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV written with the version comment line.
pub fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let first = lines.next().unwrap();
    assert!(first.starts_with("# format_version=1 seed="), "{first}");
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}
