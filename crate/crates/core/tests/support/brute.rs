//! Straight-line reimplementations of the metrics, used as oracles.

use midt_core::LeadSet;

pub fn brute_mse(x: &LeadSet, y: &LeadSet) -> f64 {
    let mut s = 0.0;
    for t in 0..x.length() {
        for c in 0..x.n_leads() {
            s += (x.get(t, c) - y.get(t, c)).powi(2);
        }
    }
    s / (x.length() * x.n_leads()) as f64
}

pub fn brute_snr(x: &LeadSet, y: &LeadSet) -> f64 {
    let mut sig = 0.0;
    let mut err = 0.0;
    for t in 0..x.length() {
        for c in 0..x.n_leads() {
            sig += x.get(t, c).powi(2);
            err += (x.get(t, c) - y.get(t, c)).powi(2);
        }
    }
    10.0 * (sig / err).log10()
}

/// Two-pass Pearson over the concatenated samples of every record.
pub fn brute_corr(records: &[LeadSet], i: usize, j: usize) -> f64 {
    let a: Vec<f64> = records.iter().flat_map(|r| r.lead(i)).collect();
    let b: Vec<f64> = records.iter().flat_map(|r| r.lead(j)).collect();
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
    let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Exhaustive symmetric Hausdorff distance per lead, averaged.
pub fn brute_hausdorff(x: &LeadSet, y: &LeadSet) -> f64 {
    let n = x.length();
    let pts = |l: Vec<f64>| -> Vec<(f64, f64)> {
        l.into_iter().enumerate().map(|(i, v)| (i as f64 / (n - 1) as f64, v)).collect()
    };
    let directed = |a: &[(f64, f64)], b: &[(f64, f64)]| {
        a.iter()
            .map(|p| b.iter().map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    let mut acc = 0.0;
    for c in 0..x.n_leads() {
        let (a, b) = (pts(x.lead(c)), pts(y.lead(c)));
        acc += directed(&a, &b).max(directed(&b, &a));
    }
    acc / x.n_leads() as f64
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counted 1/2.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Direct sum over all `L` DFT bins, orthonormal scaling.
pub fn brute_fourier(x: &LeadSet, y: &LeadSet) -> f64 {
    let n = x.length();
    let mag = |l: &[f64], k: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in l.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        (re * re + im * im).sqrt() / (n as f64).sqrt()
    };
    let mut acc = 0.0;
    for c in 0..x.n_leads() {
        let (a, b) = (x.lead(c), y.lead(c));
        for k in 0..n {
            acc += (mag(&a, k) - mag(&b, k)).powi(2);
        }
    }
    (acc / (n * x.n_leads()) as f64).sqrt()
}
