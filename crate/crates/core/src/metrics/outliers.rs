use crate::error::{Error, Result};

/// Quantile by linear interpolation between order statistics: position
/// `p * (n - 1)` in the sorted values (the default of most numeric libraries).
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierFlags {
    pub q1: f64,
    pub q3: f64,
    pub threshold: f64,
    pub flags: Vec<bool>,
}

/// Flags values above `Q3 + 3 IQR`.
pub fn outlier_flags(values: &[f64]) -> Result<OutlierFlags> {
    if values.len() < 4 {
        return Err(Error::invalid(format!("need at least 4 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_linear(&sorted, 0.25);
    let q3 = quantile_linear(&sorted, 0.75);
    let threshold = q3 + 3.0 * (q3 - q1);
    Ok(OutlierFlags { q1, q3, threshold, flags: values.iter().map(|&v| v > threshold).collect() })
}
