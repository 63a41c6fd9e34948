//! Evaluation metrics for synthetic records: fidelity, morphology, inter-lead
//! coherence, outliers and privacy.

mod correlation;
mod fidelity;
mod outliers;
mod privacy;

pub use correlation::{corr_error, corr_matrix, CorrError};
pub use fidelity::{
    data_range, fourier_distance, hausdorff_distance, pointwise_fidelity, rmse, ssim_1d, Pointwise, SsimConfig,
};
pub use outliers::{outlier_flags, quantile_linear, OutlierFlags};
pub use privacy::{adversarial_accuracy, mir, nnaa, privacy_report, threshold_advantage, PrivacyReport};

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::LeadSet;
use crate::tensor::Tensor;

/// Identifies the metric definitions; written into every report.
pub const METRIC_VERSION: &str = "midt-metrics/1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFidelity {
    pub rmse: f64,
    pub mse: f64,
    pub snr_db: Option<f64>,
    pub fourier: f64,
    pub hausdorff: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub per_record: Vec<PairFidelity>,
    pub mean: PairFidelity,
    /// Reference dynamic range used for SSIM.
    pub data_range: f64,
}

/// Compares `synth[i]` against the reference `real[i]`.
pub fn fidelity_report(real: &[LeadSet], synth: &[LeadSet], ssim: &SsimConfig) -> Result<FidelityReport> {
    if real.is_empty() {
        return Err(Error::Empty("reference records"));
    }
    if real.len() != synth.len() {
        return Err(Error::ShapeMismatch(format!("{} reference vs {} synthetic records", real.len(), synth.len())));
    }
    let range = data_range(real)?;
    let per_record = real
        .par_iter()
        .zip(synth)
        .map(|(x, y)| {
            let p = pointwise_fidelity(x, y)?;
            Ok(PairFidelity {
                rmse: p.rmse,
                mse: p.mse,
                snr_db: p.snr_db,
                fourier: fourier_distance(x, y)?,
                hausdorff: hausdorff_distance(x, y)?,
                ssim: ssim_1d(x, y, range, ssim)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_record.len() as f64;
    let avg = |f: fn(&PairFidelity) -> f64| per_record.iter().map(f).sum::<f64>() / n;
    let snrs: Vec<f64> = per_record.iter().filter_map(|p| p.snr_db).collect();
    let mean = PairFidelity {
        rmse: avg(|p| p.rmse),
        mse: avg(|p| p.mse),
        snr_db: (!snrs.is_empty()).then(|| snrs.iter().sum::<f64>() / snrs.len() as f64),
        fourier: avg(|p| p.fourier),
        hausdorff: avg(|p| p.hausdorff),
        ssim: avg(|p| p.ssim),
    };
    Ok(FidelityReport { per_record, mean, data_range: range })
}

/// One row per record pair; an absent SNR is written as an empty field.
pub fn write_fidelity_csv(report: &FidelityReport, out: &mut impl Write) -> Result<()> {
    writeln!(out, "record,rmse,mse,snr_db,fourier,hausdorff,ssim")?;
    for (i, p) in report.per_record.iter().enumerate() {
        let snr = p.snr_db.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{i},{},{},{snr},{},{},{}", p.rmse, p.mse, p.fourier, p.hausdorff, p.ssim)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub real: Tensor,
    pub synth: Tensor,
    /// `synth - real`.
    pub difference: Tensor,
    pub error: CorrError,
}

pub fn correlation_report(real: &[LeadSet], synth: &[LeadSet]) -> Result<CorrelationReport> {
    let r = corr_matrix(real)?;
    let s = corr_matrix(synth)?;
    let error = corr_error(&r, &s)?;
    let c = r.shape()[0];
    let difference = Tensor::matrix(c, c, s.data().iter().zip(r.data()).map(|(a, b)| a - b).collect());
    Ok(CorrelationReport { real: r, synth: s, difference, error })
}
