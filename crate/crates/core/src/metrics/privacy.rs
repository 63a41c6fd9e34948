use rayon::prelude::*;

use super::fidelity::rmse_unchecked;
use crate::error::{Error, Result};
use crate::signal::LeadSet;

fn check_sets(sets: &[(&str, &[LeadSet])], min: usize) -> Result<()> {
    let mut shape = None;
    for (name, set) in sets {
        if set.len() < min {
            return Err(Error::invalid(format!("{name} set needs at least {min} records, has {}", set.len())));
        }
        for r in *set {
            let s = (r.length(), r.n_leads());
            if *shape.get_or_insert(s) != s {
                return Err(Error::ShapeMismatch(format!("{name} record is {}x{}", s.0, s.1)));
            }
        }
    }
    Ok(())
}

/// For each query, the smallest distance to `pool`, skipping the query's own
/// index when `skip_self` is set (within-set leave-one-out).
fn nearest(query: &[LeadSet], pool: &[LeadSet], skip_self: bool) -> Vec<f64> {
    query
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            pool.iter()
                .enumerate()
                .filter(|&(j, _)| !(skip_self && i == j))
                .map(|(_, p)| rmse_unchecked(q.samples(), p.samples()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Best advantage of the attack "member iff distance < tau" over all tau.
pub fn threshold_advantage(members: &[f64], non_members: &[f64]) -> f64 {
    let mut m = members.to_vec();
    let mut n = non_members.to_vec();
    m.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let mut best: f64 = 0.0;
    for &tau in m.iter().chain(&n).chain(std::iter::once(&f64::INFINITY)) {
        let tpr = m.partition_point(|&d| d < tau) as f64 / m.len() as f64;
        let fpr = n.partition_point(|&d| d < tau) as f64 / n.len() as f64;
        best = best.max(tpr - fpr);
    }
    best.clamp(0.0, 1.0)
}

/// Membership inference risk with the per-sample RMSE distance to the
/// nearest synthetic record.
pub fn mir(train: &[LeadSet], holdout: &[LeadSet], synth: &[LeadSet]) -> Result<f64> {
    check_sets(&[("train", train), ("holdout", holdout), ("synthetic", synth)], 1)?;
    Ok(threshold_advantage(&nearest(train, synth, false), &nearest(holdout, synth, false)))
}

fn frac_greater(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x > y).count() as f64 / a.len() as f64
}

/// Adversarial accuracy of a nearest-neighbour discriminator between `a` and
/// the synthetic set `s`.
pub fn adversarial_accuracy(a: &[LeadSet], s: &[LeadSet]) -> f64 {
    let d_as = nearest(a, s, false);
    let d_aa = nearest(a, a, true);
    let d_sa = nearest(s, a, false);
    let d_ss = nearest(s, s, true);
    0.5 * (frac_greater(&d_as, &d_aa) + frac_greater(&d_sa, &d_ss))
}

/// `AA(holdout, synth) - AA(train, synth)`.
pub fn nnaa(train: &[LeadSet], holdout: &[LeadSet], synth: &[LeadSet]) -> Result<f64> {
    check_sets(&[("train", train), ("holdout", holdout), ("synthetic", synth)], 2)?;
    Ok(adversarial_accuracy(holdout, synth) - adversarial_accuracy(train, synth))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyReport {
    pub mir: f64,
    pub nnaa: f64,
    pub aa_train: f64,
    pub aa_holdout: f64,
    pub mean_train_to_synth: f64,
    pub mean_holdout_to_synth: f64,
}

pub fn privacy_report(train: &[LeadSet], holdout: &[LeadSet], synth: &[LeadSet]) -> Result<PrivacyReport> {
    check_sets(&[("train", train), ("holdout", holdout), ("synthetic", synth)], 2)?;
    let dt = nearest(train, synth, false);
    let dh = nearest(holdout, synth, false);
    let aa_train = adversarial_accuracy(train, synth);
    let aa_holdout = adversarial_accuracy(holdout, synth);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(PrivacyReport {
        mir: threshold_advantage(&dt, &dh),
        nnaa: aa_holdout - aa_train,
        aa_train,
        aa_holdout,
        mean_train_to_synth: mean(&dt),
        mean_holdout_to_synth: mean(&dh),
    })
}
