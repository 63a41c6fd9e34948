//! Downstream-harness checks shared with the acceptance suite.

use midt_core::downstream::{
    auroc, fold_mix_experiment, shuffle_labels, train_classifier, Cell, ClassifierConfig, DiffusionGenerator,
    FoldMixPlan, FoldMixRow, FoldMixTable, Scorer,
};
use midt_core::signal::OracleClass;
use midt_core::{Dataset, NetConfig};

use super::fixtures::{model, two_class_oracle};

/// AUROC of the probability of `positive` against the true labels.
pub fn binary_auroc(clf: &impl Scorer, data: &Dataset, positive: OracleClass) -> f64 {
    let p = positive.label();
    let scores: Vec<f64> = data.records.iter().map(|r| clf.class_probs(&r.leads).unwrap()[p]).collect();
    let labels: Vec<bool> = data.records.iter().map(|r| r.meta.class() == Some(p)).collect();
    auroc(&scores, &labels).unwrap()
}

pub fn clf_config(steps: usize, seed: u64) -> ClassifierConfig {
    ClassifierConfig { n_classes: 3, steps, seed, ..ClassifierConfig::default() }
}

/// Holdout AUROC of classifiers trained on `permutations` label shuffles.
///
/// A classifier fit to permuted labels points in an arbitrary direction of
/// feature space, which on well separated classes ranks the holdout either
/// well or badly; only the average over permutations sits at chance.
pub fn shuffled_aurocs(permutations: u64) -> Vec<f64> {
    let data = two_class_oracle(200, OracleClass::WideQrs, 3);
    let holdout = two_class_oracle(200, OracleClass::WideQrs, 4);
    (0..permutations)
        .map(|s| {
            let train = shuffle_labels(&data, s).unwrap();
            let clf = train_classifier(&train, &clf_config(300, s)).unwrap();
            binary_auroc(&clf, &holdout, OracleClass::WideQrs)
        })
        .collect()
}

pub fn cell(row: &FoldMixRow, k: usize) -> Cell {
    row.cells.iter().find(|c| c.k == k).expect("cell present").clone()
}

/// Substitute-mode table with `k = 0` and `k = 8` for an untrained diffusion
/// generator; the last row is the real-only reference.
pub fn substitute_table(seed: u64) -> FoldMixTable {
    let data = two_class_oracle(200, OracleClass::WideQrs, seed);
    let net = NetConfig { hidden: 4, n_blocks: 1, dilations: vec![1], kernel_size: 3, step_embedding_dim: 4 };
    let m = model(net, 2, seed);
    let gen = DiffusionGenerator { model: &m };
    let plan = FoldMixPlan { steps: vec![0, 8], ..FoldMixPlan::substitute(seed, 2) };
    fold_mix_experiment(&data, &[("untrained", &gen)], &plan, &clf_config(150, 0)).unwrap()
}
