//! Downstream utility: a small classifier, AUROC, faithfulness and the
//! fold-mix augmentation and substitution experiments.

mod auroc;
mod classifier;
mod faithfulness;
mod foldmix;

pub use auroc::{auroc, macro_auroc};
pub use classifier::{shuffle_labels, train_classifier, Classifier, ClassifierConfig, Scorer};
pub use faithfulness::faithfulness;
pub use foldmix::{
    fold_mix_experiment, write_fold_mix_csv, Cell, FoldMixMode, FoldMixPlan, FoldMixRow, FoldMixTable, Generator,
};

use crate::diffusion::{sample_each, DiffusionModel};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::signal::{Dataset, LeadSet, Record};

/// Samples one record per template record under its conditioning.
pub struct DiffusionGenerator<'a> {
    pub model: &'a DiffusionModel,
}

impl Generator for DiffusionGenerator<'_> {
    fn generate(&self, template: &Dataset, seed: u64) -> Result<Dataset> {
        let Some(first) = template.records.first() else {
            return Ok(Dataset::default());
        };
        let cs = template.records.iter().map(|r| self.model.conditioning(&r.meta)).collect::<Result<Vec<_>>>()?;
        let leads = sample_each(self.model, &cs, first.leads.length(), first.leads.sample_rate_hz(), seed)?;
        relabel(template, leads)
    }
}

/// Label-free white noise with the template's shapes; the null generator.
pub struct NoiseGenerator {
    pub std: f64,
}

impl Generator for NoiseGenerator {
    fn generate(&self, template: &Dataset, seed: u64) -> Result<Dataset> {
        let mut r = rng::stream(seed, streams::SYNTHETIC);
        let leads = template
            .records
            .iter()
            .map(|t| {
                let (l, c) = (t.leads.length(), t.leads.n_leads());
                LeadSet::new(l, c, t.leads.sample_rate_hz(), rng::normal_vec(&mut r, l * c, self.std))
            })
            .collect::<Result<Vec<_>>>()?;
        relabel(template, leads)
    }
}

fn relabel(template: &Dataset, leads: Vec<LeadSet>) -> Result<Dataset> {
    if leads.len() != template.len() {
        return Err(Error::ShapeMismatch(format!("{} generated for {} templates", leads.len(), template.len())));
    }
    let records = template
        .records
        .iter()
        .zip(leads)
        .map(|(t, l)| Record { leads: l, meta: t.meta.clone(), fold: t.fold })
        .collect();
    Dataset::new(records)
}
