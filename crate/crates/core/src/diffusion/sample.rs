use rayon::prelude::*;

use super::DiffusionModel;
use crate::conditioning::ConditioningVector;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::signal::LeadSet;

/// Ancestral sampling of `n` records of `length` samples, all under `c`.
///
/// `x_{t-1} = (x_t - beta_t / sqrt(1 - ab_t) eps) / sqrt(alpha_t) + sqrt(beta_t) z`
/// with `z = 0` at the last step. Record `i` uses its own seeded stream.
pub fn sample(
    model: &DiffusionModel,
    c: &ConditioningVector,
    length: usize,
    sample_rate_hz: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<LeadSet>> {
    sample_each(model, &vec![c.clone(); n], length, sample_rate_hz, seed)
}

/// One record per conditioning vector; record `i` is identical to the `i`-th
/// output of [`sample`] under `cs[i]` with the same seed.
pub fn sample_each(
    model: &DiffusionModel,
    cs: &[ConditioningVector],
    length: usize,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<Vec<LeadSet>> {
    if length < LeadSet::MIN_LENGTH {
        return Err(Error::invalid(format!("length {length} below minimum {}", LeadSet::MIN_LENGTH)));
    }
    let sched = &model.schedule;
    let size = length * model.n_leads;
    cs.par_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut r = rng::stream(rng::child_seed(seed, i as u64), streams::SAMPLE);
            let mut x = LeadSet::new(length, model.n_leads, sample_rate_hz, rng::normal_vec(&mut r, size, 1.0))?;
            for t in (1..=sched.steps()).rev() {
                let eps = model.predict_noise(&x, t, c)?;
                let (beta, alpha, ab) = (sched.beta(t), sched.alpha(t), sched.alpha_bar(t));
                let coef = beta / (1.0 - ab).sqrt();
                let z = if t > 1 { rng::normal_vec(&mut r, size, beta.sqrt()) } else { vec![0.0; size] };
                let data = x
                    .samples()
                    .iter()
                    .zip(eps.samples())
                    .zip(&z)
                    .map(|((xv, ev), zv)| (xv - coef * ev) / alpha.sqrt() + zv)
                    .collect();
                x = LeadSet::new(length, model.n_leads, sample_rate_hz, data)?;
            }
            Ok(x)
        })
        .collect()
}
