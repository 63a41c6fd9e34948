use crate::error::{Error, Result};

/// Area under the ROC curve via average ranks, equal to the fraction of
/// (positive, negative) pairs ordered correctly with ties counted as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// One-vs-rest AUROC averaged over the classes that have both positive and
/// negative examples.
pub fn macro_auroc(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} score rows, {} labels", probs.len(), labels.len())));
    }
    let mut total = 0.0;
    let mut used = 0;
    for k in 0..n_classes {
        let is_k: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        if is_k.iter().all(|&b| b) || !is_k.iter().any(|&b| b) {
            continue;
        }
        let s: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        total += auroc(&s, &is_k)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::SingleClass);
    }
    Ok(total / used as f64)
}
