//! Drives the `midt` binary for the integration and acceptance tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A pipeline small enough to run every stage in seconds.
pub const SMALL_CONFIG: &str = r#"
seed = 7

[data]
n_records = 80
n_leads = 2
length = 64
latent_sources = 2

[net]
hidden = 8
n_blocks = 2
dilations = [1, 2]
step_embedding_dim = 8

[schedule]
steps = 50

[train]
steps = 20
batch_size = 4
midt_windows = [16, 32, 64]

[eval]
ssim = { window = 16 }

[privacy]
n = 8

[downstream]
steps = 20
batch_size = 4
repetitions = 2
"#;

pub const STAGES: &[&str] = &["gen-data", "train", "sample", "eval", "privacy", "downstream", "report"];

pub fn midt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_midt")).args(args).env_remove("MIDT_THREADS").output().expect("binary runs")
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Runs `stage` and returns the run directory it reported.
pub fn stage(stage: &str, config: &Path, out: &Path) -> PathBuf {
    let o = midt(&[stage, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{stage} failed: {}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let line = stdout.lines().find_map(|l| l.strip_prefix("run directory: ")).expect("run directory line");
    PathBuf::from(line)
}

pub fn pipeline(config: &Path, out: &Path) -> PathBuf {
    let mut dir = PathBuf::new();
    for s in STAGES {
        dir = stage(s, config, out);
    }
    dir
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
