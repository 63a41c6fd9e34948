use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear beta schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 200, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// `beta`, `alpha = 1 - beta` and the running product `alpha_bar`, indexed
/// by the 1-based step `t` through the accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")));
    }
    let betas: Vec<f64> =
        (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule { betas, alphas, alpha_bars })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// Panics when `t` is outside `1..=T`; use [`NoiseSchedule::check`] first.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn constant_beta_closed_form() {
        let b = 0.03;
        let s = make_schedule(50, b, b).unwrap();
        for t in 1..=50 {
            assert!((s.alpha_bar(t) - (1.0 - b).powi(t as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn default_schedule_decreases() {
        let s = ScheduleConfig::default().build().unwrap();
        let mut prod = 1.0;
        for t in 1..=200 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 199.0);
            assert!((s.alpha_bar(t) - prod).abs() < 1e-12);
        }
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        // independent float64 product, 1 - b over linspace(1e-4, 0.02, 200)
        assert!((s.alpha_bar(200) - 0.132_182_754_250_617_93).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
        let s = make_schedule(10, 0.1, 0.2).unwrap();
        assert!(s.check(0).is_err() && s.check(11).is_err() && s.check(10).is_ok());
    }
}
