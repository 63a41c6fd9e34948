use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::auroc::macro_auroc;
use super::classifier::{train_classifier, ClassifierConfig, Scorer};
use crate::error::{Error, Result};
use crate::rng;
use crate::signal::{Dataset, Record};

/// Produces labelled synthetic records mirroring the metadata of `template`.
pub trait Generator: Sync {
    fn generate(&self, template: &Dataset, seed: u64) -> Result<Dataset>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldMixMode {
    /// All base folds real, plus `k` synthetic folds.
    Augment,
    /// Base folds `1..=k` real, the rest synthetic.
    Substitute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldMixPlan {
    pub mode: FoldMixMode,
    /// Training folds, in order.
    pub base_folds: Vec<u8>,
    pub test_fold: u8,
    /// Values of `k` (one column each).
    pub steps: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
}

impl FoldMixPlan {
    pub fn augment(seed: u64, repetitions: usize) -> Self {
        Self {
            mode: FoldMixMode::Augment,
            base_folds: (1..=8).collect(),
            test_fold: 10,
            steps: (1..=8).collect(),
            repetitions,
            seed,
        }
    }

    pub fn substitute(seed: u64, repetitions: usize) -> Self {
        Self { mode: FoldMixMode::Substitute, steps: (0..=8).collect(), ..Self::augment(seed, repetitions) }
    }

    fn validate(&self, real: &Dataset) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be >= 1"));
        }
        if self.base_folds.contains(&self.test_fold) {
            return Err(Error::OverlappingFolds(self.test_fold));
        }
        let present = real.folds();
        for f in self.base_folds.iter().chain(std::iter::once(&self.test_fold)) {
            if !present.contains(f) {
                return Err(Error::InsufficientFolds(format!("fold {f} has no records")));
            }
        }
        let max = self.steps.iter().copied().max().unwrap_or(0);
        if max > self.base_folds.len() || (self.mode == FoldMixMode::Augment && self.steps.contains(&0)) {
            return Err(Error::InsufficientFolds(format!(
                "steps up to {max} with {} base folds",
                self.base_folds.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub k: usize,
    pub aurocs: Vec<f64>,
    pub mean: f64,
    /// Normal-approximation half width, `1.96 sd / sqrt(n)`.
    pub ci95: f64,
}

impl Cell {
    fn new(k: usize, aurocs: Vec<f64>) -> Self {
        let n = aurocs.len() as f64;
        let mean = aurocs.iter().sum::<f64>() / n;
        let sd = if aurocs.len() > 1 {
            (aurocs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { k, aurocs, mean, ci95: 1.96 * sd / n.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMixRow {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMixTable {
    pub mode: FoldMixMode,
    pub rows: Vec<FoldMixRow>,
}

fn evaluate(train: &Dataset, test: &Dataset, clf: &ClassifierConfig, seed: u64) -> Result<f64> {
    let cfg = ClassifierConfig { seed, ..clf.clone() };
    let model = train_classifier(train, &cfg)?;
    let probs = test.records.iter().map(|r| model.class_probs(&r.leads)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = test.records.iter().map(|r| r.meta.class().unwrap_or(usize::MAX)).collect();
    macro_auroc(&probs, &labels, model.n_classes())
}

fn row(
    label: &str,
    plan: &FoldMixPlan,
    test: &Dataset,
    clf: &ClassifierConfig,
    set_for: impl Fn(usize) -> Dataset + Sync,
) -> Result<FoldMixRow> {
    let cells = plan
        .steps
        .par_iter()
        .map(|&k| {
            let train = set_for(k);
            let aurocs = (0..plan.repetitions)
                .map(|rep| evaluate(&train, test, clf, rng::child_seed(plan.seed, rep as u64)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Cell::new(k, aurocs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldMixRow { label: label.to_string(), cells })
}

fn concat(parts: &[&Dataset]) -> Dataset {
    let records: Vec<Record> = parts.iter().flat_map(|d| d.records.iter().cloned()).collect();
    Dataset { records }
}

/// Runs the fold-mix protocol and returns one row per generator followed by
/// the real-only reference row.
///
/// Synthetic fold `f` is generated from the metadata of real fold `f`. The
/// real-only row trains on real folds `base[..k]`; in substitute mode the
/// training set for `k` lists base folds in order, real for the first `k`
/// and synthetic after, so `k = len(base)` is exactly the real-only set.
/// Repetition `r` of every cell uses classifier seed `child_seed(seed, r)`.
pub fn fold_mix_experiment(
    real: &Dataset,
    generators: &[(&str, &dyn Generator)],
    plan: &FoldMixPlan,
    clf: &ClassifierConfig,
) -> Result<FoldMixTable> {
    plan.validate(real)?;
    let test = real.in_folds(&[plan.test_fold]);
    let real_folds: BTreeMap<u8, Dataset> = plan.base_folds.iter().map(|&f| (f, real.in_folds(&[f]))).collect();
    let mut rows = Vec::with_capacity(generators.len() + 1);
    for (name, gen) in generators {
        let synth: BTreeMap<u8, Dataset> = plan
            .base_folds
            .iter()
            .map(|&f| Ok((f, gen.generate(&real_folds[&f], rng::child_seed(plan.seed ^ 0x5EED, f as u64))?)))
            .collect::<Result<_>>()?;
        let set_for = |k: usize| -> Dataset {
            let parts: Vec<&Dataset> = match plan.mode {
                FoldMixMode::Augment => plan
                    .base_folds
                    .iter()
                    .map(|f| &real_folds[f])
                    .chain(plan.base_folds[..k].iter().map(|f| &synth[f]))
                    .collect(),
                FoldMixMode::Substitute => plan
                    .base_folds
                    .iter()
                    .enumerate()
                    .map(|(i, f)| if i < k { &real_folds[f] } else { &synth[f] })
                    .collect(),
            };
            concat(&parts)
        };
        rows.push(row(name, plan, &test, clf, set_for)?);
    }
    let real_only = |k: usize| -> Dataset {
        let parts: Vec<&Dataset> = plan.base_folds[..k].iter().map(|f| &real_folds[f]).collect();
        concat(&parts)
    };
    let real_plan = FoldMixPlan { steps: plan.steps.iter().copied().filter(|&k| k > 0).collect(), ..plan.clone() };
    rows.push(row("real only", &real_plan, &test, clf, real_only)?);
    Ok(FoldMixTable { mode: plan.mode, rows })
}

/// Rows are generators, columns the number of folds `k`; each cell is
/// `mean ± ci95`. Columns a row does not cover are left empty.
pub fn write_fold_mix_csv(table: &FoldMixTable, out: &mut impl Write) -> Result<()> {
    let mut ks: Vec<usize> = table.rows.iter().flat_map(|r| r.cells.iter().map(|c| c.k)).collect();
    ks.sort_unstable();
    ks.dedup();
    write!(out, "row")?;
    for k in &ks {
        write!(out, ",k{k}_mean,k{k}_ci95")?;
    }
    writeln!(out)?;
    for r in &table.rows {
        write!(out, "{}", r.label)?;
        for k in &ks {
            match r.cells.iter().find(|c| c.k == *k) {
                Some(c) => write!(out, ",{},{}", c.mean, c.ci95)?,
                None => write!(out, ",,")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
