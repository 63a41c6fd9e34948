//! Report files. Every report carries the config hash, the seed and the
//! metric-definition version: TOML summaries as top-level keys, CSV files as a
//! leading `#` comment line.

use std::fs;
use std::path::Path;

use midt_core::metrics::METRIC_VERSION;
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub metric_version: String,
}

impl Provenance {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Self { config_hash: config_hash.to_string(), seed, metric_version: METRIC_VERSION.to_string() }
    }

    pub fn csv_comment(&self) -> String {
        format!("# config_hash={},seed={},metric_version={}\n", self.config_hash, self.seed, self.metric_version)
    }
}

/// Writes `body` (produced by `fill`) below the provenance comment.
pub fn write_csv(
    path: &Path,
    prov: &Provenance,
    fill: impl FnOnce(&mut Vec<u8>) -> midt_core::Result<()>,
) -> CliResult<()> {
    let mut buf = prov.csv_comment().into_bytes();
    fill(&mut buf)?;
    fs::write(path, buf).map_err(CliError::io(path))
}

#[derive(Serialize)]
struct WithProvenance<'a, T: Serialize> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_summary<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> CliResult<()> {
    let text = toml::to_string(&WithProvenance { provenance: prov, body })
        .map_err(|e| CliError::Setting(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text).map_err(CliError::io(path))
}

/// Drops leading `#` lines, for readers of our CSV reports.
pub fn strip_comments(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}
