//! Membership-risk calibration sets built from oracle draws.

use midt_core::metrics::{privacy_report, PrivacyReport};
use midt_core::rng::child_seed;
use midt_core::signal::{make_oracle_dataset, OracleConfig};
use midt_core::LeadSet;

pub const SET_SIZE: usize = 200;

fn draw(seed: u64) -> Vec<LeadSet> {
    let cfg = OracleConfig { n_records: SET_SIZE, ..OracleConfig::default() };
    make_oracle_dataset(&cfg, seed).unwrap().leadsets()
}

/// Reports for `(synth = copies of train, synth independent of both)` with
/// train, holdout and the independent synthetic set drawn iid.
pub fn calibration(seed: u64) -> (PrivacyReport, PrivacyReport) {
    let train = draw(child_seed(seed, 0));
    let holdout = draw(child_seed(seed, 1));
    let independent = draw(child_seed(seed, 2));
    (privacy_report(&train, &holdout, &train).unwrap(), privacy_report(&train, &holdout, &independent).unwrap())
}
