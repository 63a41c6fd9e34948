//! Small oracle datasets and models shared by the training-based tests.

use midt_core::diffusion::{make_schedule, train, LossRecord};
use midt_core::signal::{make_oracle_dataset, OracleClass, OracleConfig};
use midt_core::{Dataset, DiffusionModel, GroupMask, NetConfig, TrainConfig};

/// Oracle at the smoke-test scale: 2 leads, 64 samples, 200 records.
pub fn smoke_oracle() -> OracleConfig {
    OracleConfig { n_records: 200, n_leads: 2, length: 64, latent_sources: 2, ..OracleConfig::default() }
}

pub fn smoke_train_config(seed: u64) -> TrainConfig {
    TrainConfig { steps: 300, seed, midt_windows: vec![16, 32, 64], ..TrainConfig::default() }
}

pub fn model(net: NetConfig, n_leads: usize, seed: u64) -> DiffusionModel {
    DiffusionModel::new(net, make_schedule(200, 1e-4, 0.02).unwrap(), GroupMask::all(), n_leads, seed).unwrap()
}

/// Trains a default-sized model on the smoke oracle and returns the trace.
pub fn smoke_run(seed: u64) -> Vec<LossRecord> {
    let data = make_oracle_dataset(&smoke_oracle(), seed).unwrap();
    let mut m = model(NetConfig::default(), 2, seed);
    train(&data, &mut m, &smoke_train_config(seed)).unwrap()
}

/// `mean(last 50) / mean(first 50)` of the total loss.
pub fn smoke_ratio(trace: &[LossRecord]) -> f64 {
    let mean = |s: &[LossRecord]| s.iter().map(|r| r.total).sum::<f64>() / s.len() as f64;
    mean(&trace[trace.len() - 50..]) / mean(&trace[..50])
}

/// Two-class oracle used by the downstream tests: normal against `other`.
pub fn two_class_oracle(n_records: usize, other: OracleClass, seed: u64) -> Dataset {
    let cfg = OracleConfig {
        n_records,
        n_leads: 2,
        length: 64,
        latent_sources: 2,
        classes: vec![OracleClass::Normal, other],
        ..OracleConfig::default()
    };
    make_oracle_dataset(&cfg, seed).unwrap()
}
