//! Paired training runs with and without the spectral term on a rank-structured
//! oracle, scored by how well generated records keep the cross-lead
//! correlations.

use midt_core::diffusion::{sample_each, train};
use midt_core::metrics::{corr_error, corr_matrix};
use midt_core::signal::{make_oracle_dataset, OracleConfig};
use midt_core::{NetConfig, TrainConfig};

use super::fixtures::model;

pub const BETAS: [f64; 2] = [0.1, 0.0];

/// Four leads driven by two latent sources.
pub fn rank_two_oracle() -> OracleConfig {
    OracleConfig { n_records: 200, n_leads: 4, length: 64, latent_sources: 2, ..OracleConfig::default() }
}

/// `corr_error(real, synth).avg_abs` for a model trained with `midt_weight`.
pub fn corr_error_after_training(seed: u64, midt_weight: f64) -> f64 {
    let data = make_oracle_dataset(&rank_two_oracle(), seed).unwrap();
    let mut m = model(NetConfig { hidden: 32, ..NetConfig::default() }, 4, seed);
    let cfg = TrainConfig {
        steps: 1200,
        seed,
        midt_weight,
        midt_windows: vec![16, 32, 64],
        batch_size: 16,
        ..TrainConfig::default()
    };
    train(&data, &mut m, &cfg).unwrap();
    let cs: Vec<_> = data.records.iter().take(100).map(|r| m.conditioning(&r.meta).unwrap()).collect();
    let synth = sample_each(&m, &cs, 64, 100.0, seed + 1000).unwrap();
    corr_error(&corr_matrix(&data.leadsets()).unwrap(), &corr_matrix(&synth).unwrap()).unwrap().avg_abs
}
