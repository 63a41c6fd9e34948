use super::classifier::Scorer;
use crate::error::{Error, Result};
use crate::signal::Dataset;

/// Fraction of synthetic records whose conditioned class is among the
/// classes the scorer assigns probability `>= threshold`.
pub fn faithfulness(synth: &Dataset, scorer: &impl Scorer, threshold: f64) -> Result<f64> {
    if !scorer.is_trained() {
        return Err(Error::Untrained);
    }
    if synth.is_empty() {
        return Err(Error::Empty("synthetic records"));
    }
    let mut hits = 0usize;
    for r in &synth.records {
        let class = r.meta.class().ok_or_else(|| Error::invalid("synthetic record has no diagnostic label"))?;
        let p = scorer.class_probs(&r.leads)?;
        if p.get(class).is_some_and(|&v| v >= threshold) {
            hits += 1;
        }
    }
    Ok(hits as f64 / synth.len() as f64)
}
