use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::LeadSet;

pub(crate) fn check_shape(x: &LeadSet, y: &LeadSet) -> Result<()> {
    if !x.same_shape(y) {
        return Err(Error::ShapeMismatch(format!("{}x{} vs {}x{}", x.length(), x.n_leads(), y.length(), y.n_leads())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pointwise {
    pub rmse: f64,
    pub mse: f64,
    /// `None` when the residual is exactly zero.
    pub snr_db: Option<f64>,
}

/// Error of `y` against the reference `x`.
pub fn pointwise_fidelity(x: &LeadSet, y: &LeadSet) -> Result<Pointwise> {
    check_shape(x, y)?;
    let (mut signal, mut resid) = (0.0, 0.0);
    for (a, b) in x.samples().iter().zip(y.samples()) {
        signal += a * a;
        resid += (a - b) * (a - b);
    }
    let mse = resid / x.samples().len() as f64;
    let snr_db = (resid > 0.0).then(|| 10.0 * (signal / resid).log10());
    Ok(Pointwise { rmse: mse.sqrt(), mse, snr_db })
}

/// Per-sample RMSE; the record distance used by the privacy metrics.
pub fn rmse(x: &LeadSet, y: &LeadSet) -> Result<f64> {
    check_shape(x, y)?;
    Ok(rmse_unchecked(x.samples(), y.samples()))
}

pub(crate) fn rmse_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (s / a.len() as f64).sqrt()
}

fn dft_magnitudes(planner: &mut FftPlanner<f64>, lead: &[f64]) -> Vec<f64> {
    let n = lead.len();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = lead.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter().map(|c| c.norm() * scale).collect()
}

/// RMS difference of orthonormal DFT magnitude spectra over all `L` bins of
/// every lead. Never exceeds [`rmse`].
pub fn fourier_distance(x: &LeadSet, y: &LeadSet) -> Result<f64> {
    check_shape(x, y)?;
    let mut planner = FftPlanner::new();
    let mut acc = 0.0;
    for c in 0..x.n_leads() {
        let mx = dft_magnitudes(&mut planner, &x.lead(c));
        let my = dft_magnitudes(&mut planner, &y.lead(c));
        acc += mx.iter().zip(&my).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((acc / x.samples().len() as f64).sqrt())
}

/// Largest distance from a point of `a` to its nearest point of `b`. Both are
/// waveforms on the shared time grid `i / (L - 1)`.
fn directed_hausdorff(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let dt = 1.0 / (n - 1) as f64;
    let mut worst: f64 = 0.0;
    for (i, &va) in a.iter().enumerate() {
        let mut best = (va - b[i]) * (va - b[i]);
        for off in 1..n {
            let gap = off as f64 * dt;
            if gap * gap >= best || best <= worst {
                // nothing further out can be closer, or `a_i` cannot raise the max
                break;
            }
            for j in [i.checked_sub(off), Some(i + off).filter(|&j| j < n)].into_iter().flatten() {
                let d = gap * gap + (va - b[j]) * (va - b[j]);
                best = best.min(d);
            }
        }
        worst = worst.max(best);
    }
    worst.sqrt()
}

/// Symmetric Hausdorff distance between the point sets `{(i / (L - 1), v_i)}`,
/// averaged over leads.
pub fn hausdorff_distance(x: &LeadSet, y: &LeadSet) -> Result<f64> {
    check_shape(x, y)?;
    let mut acc = 0.0;
    for c in 0..x.n_leads() {
        let (a, b) = (x.lead(c), y.lead(c));
        acc += directed_hausdorff(&a, &b).max(directed_hausdorff(&b, &a));
    }
    Ok(acc / x.n_leads() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub window: usize,
    pub stride: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 64, stride: 32, k1: 0.01, k2: 0.03 }
    }
}

/// Mean SSIM over sliding windows and leads, with population statistics.
pub fn ssim_1d(x: &LeadSet, y: &LeadSet, data_range: f64, cfg: &SsimConfig) -> Result<f64> {
    check_shape(x, y)?;
    if cfg.window == 0 || cfg.stride == 0 {
        return Err(Error::invalid("ssim window and stride must be >= 1"));
    }
    if x.length() < cfg.window {
        return Err(Error::invalid(format!("length {} shorter than ssim window {}", x.length(), cfg.window)));
    }
    if !(data_range > 0.0) {
        return Err(Error::invalid("ssim data range must be positive"));
    }
    let c1 = (cfg.k1 * data_range).powi(2);
    let c2 = (cfg.k2 * data_range).powi(2);
    let w = cfg.window as f64;
    let (mut acc, mut count) = (0.0, 0usize);
    for c in 0..x.n_leads() {
        let (a, b) = (x.lead(c), y.lead(c));
        let mut start = 0;
        while start + cfg.window <= a.len() {
            let (wa, wb) = (&a[start..start + cfg.window], &b[start..start + cfg.window]);
            let mx = wa.iter().sum::<f64>() / w;
            let my = wb.iter().sum::<f64>() / w;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for (p, q) in wa.iter().zip(wb) {
                vx += (p - mx) * (p - mx);
                vy += (q - my) * (q - my);
                cxy += (p - mx) * (q - my);
            }
            let (vx, vy, cxy) = (vx / w, vy / w, cxy / w);
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
            start += cfg.stride;
        }
    }
    Ok(acc / count as f64)
}

/// `max - min` over every sample of the reference records.
pub fn data_range(records: &[LeadSet]) -> Result<f64> {
    let mut it = records.iter().flat_map(|r| r.samples().iter().copied());
    let first = it.next().ok_or(Error::Empty("reference records"))?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: &[f64]) -> LeadSet {
        // zero-padded to the minimum length
        let mut d = v.to_vec();
        d.resize(LeadSet::MIN_LENGTH, 0.0);
        LeadSet::new(LeadSet::MIN_LENGTH, 1, 100.0, d).unwrap()
    }

    fn tiled(period: &[f64]) -> LeadSet {
        LeadSet::new(16, 1, 100.0, (0..16).map(|i| period[i % period.len()]).collect()).unwrap()
    }

    #[test]
    fn pointwise_hand_cases() {
        let p = pointwise_fidelity(&tiled(&[0.0, 1.0]), &tiled(&[1.0, 1.0])).unwrap();
        assert!((p.mse - 0.5).abs() < 1e-15);
        assert!((p.rmse - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let x = tiled(&[1.0, 0.0, -1.0, 0.0]);
        let y = x.map(|v| v + 0.1);
        let p = pointwise_fidelity(&x, &y).unwrap();
        assert!((p.snr_db.unwrap() - 16.989_700_043_360_19).abs() < 1e-9);
        let same = pointwise_fidelity(&x, &x).unwrap();
        assert_eq!((same.rmse, same.mse, same.snr_db), (0.0, 0.0, None));
    }

    #[test]
    fn impulses_have_equal_spectra() {
        // periodic impulse trains one sample apart
        let x = tiled(&[1.0, 0.0, 0.0, 0.0]);
        let y = tiled(&[0.0, 1.0, 0.0, 0.0]);
        assert!(fourier_distance(&x, &y).unwrap() < 1e-12);
        assert!((rmse(&x, &y).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn hausdorff_identity() {
        let x = one(&[0.3, -1.0, 2.0]);
        assert_eq!(hausdorff_distance(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn two_point_sets() {
        assert!(
            (directed_hausdorff(&[0.0, 0.0], &[1.0, 0.0]).max(directed_hausdorff(&[1.0, 0.0], &[0.0, 0.0])) - 1.0)
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn ssim_constant_leads() {
        let a = LeadSet::new(64, 1, 100.0, vec![1.0; 64]).unwrap();
        let b = a.map(|_| 0.0);
        let s = ssim_1d(&a, &b, 1.0, &SsimConfig::default()).unwrap();
        let c1 = 1e-4;
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-15);
        assert_eq!(ssim_1d(&a, &a, 1.0, &SsimConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_short_signal() {
        let a = one(&[1.0]);
        assert!(ssim_1d(&a, &a, 1.0, &SsimConfig::default()).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = one(&[1.0]);
        let b = LeadSet::new(17, 1, 100.0, vec![0.0; 17]).unwrap();
        assert!(pointwise_fidelity(&a, &b).is_err());
        assert!(fourier_distance(&a, &b).is_err());
        assert!(hausdorff_distance(&a, &b).is_err());
    }
}
