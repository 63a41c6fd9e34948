use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Gender, LeadSet, Record, RecordMeta};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

/// Waveform regime of a generated record. The index doubles as the diagnostic
/// label id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleClass {
    Normal,
    /// QRS bump twice as wide.
    WideQrs,
    /// All amplitudes scaled by 0.4.
    LowVoltage,
}

impl OracleClass {
    pub const ALL: [OracleClass; 3] = [OracleClass::Normal, OracleClass::WideQrs, OracleClass::LowVoltage];

    pub fn label(self) -> usize {
        match self {
            OracleClass::Normal => 0,
            OracleClass::WideQrs => 1,
            OracleClass::LowVoltage => 2,
        }
    }
}

/// One Gaussian bump of a beat: amplitude (mV), offset from the beat fiducial
/// and width, both in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpShape {
    pub amplitude: f64,
    pub offset_s: f64,
    pub width_s: f64,
}

/// P, QRS and T bumps of one latent source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceTemplate {
    pub p: BumpShape,
    pub qrs: BumpShape,
    pub t: BumpShape,
}

impl SourceTemplate {
    fn defaults() -> [SourceTemplate; 3] {
        let b = |amplitude, offset_s, width_s| BumpShape { amplitude, offset_s, width_s };
        [
            SourceTemplate { p: b(0.15, -0.20, 0.025), qrs: b(1.0, 0.0, 0.02), t: b(0.30, 0.30, 0.05) },
            SourceTemplate { p: b(0.08, -0.18, 0.025), qrs: b(-0.5, 0.02, 0.02), t: b(0.25, 0.32, 0.06) },
            SourceTemplate { p: b(0.05, -0.21, 0.03), qrs: b(0.35, -0.015, 0.02), t: b(-0.15, 0.28, 0.05) },
        ]
    }

    /// Template for latent source `j`; sources beyond the third reuse the
    /// three base shapes with alternating sign and shrinking amplitude.
    pub fn for_source(j: usize) -> SourceTemplate {
        let base = Self::defaults()[j % 3];
        if j < 3 {
            return base;
        }
        let gain = if (j / 3) % 2 == 1 { -0.6 } else { 0.5 } / (j / 3) as f64;
        let scale = |s: BumpShape| BumpShape { amplitude: s.amplitude * gain, ..s };
        SourceTemplate { p: scale(base.p), qrs: scale(base.qrs), t: scale(base.t) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub n_records: usize,
    pub n_leads: usize,
    pub length: usize,
    pub sample_rate_hz: f64,
    pub latent_sources: usize,
    /// `n_leads x latent_sources`, row-major by lead. `None` selects
    /// [`default_mixing`].
    #[serde(default)]
    pub mixing: Option<Vec<Vec<f64>>>,
    /// One template per latent source; `None` selects the built-in shapes.
    #[serde(default)]
    pub templates: Option<Vec<SourceTemplate>>,
    pub heart_rate_bpm: (f64, f64),
    /// Per-record multiplicative amplitude jitter (standard deviation).
    pub amplitude_jitter: f64,
    pub noise_std: f64,
    pub classes: Vec<OracleClass>,
    pub records_per_patient: usize,
    pub n_folds: u8,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_records: 300,
            n_leads: 12,
            length: 256,
            sample_rate_hz: 100.0,
            latent_sources: 3,
            mixing: None,
            templates: None,
            heart_rate_bpm: (55.0, 95.0),
            amplitude_jitter: 0.1,
            noise_std: 0.02,
            classes: OracleClass::ALL.to_vec(),
            records_per_patient: 1,
            n_folds: 10,
        }
    }
}

/// Deterministic full-column-rank mixing: `M[i][j] = cos(pi (i + 1/2)(j + 1/2) / C)`.
/// Columns are samples of distinct DCT-IV basis vectors and hence orthogonal.
pub fn default_mixing(n_leads: usize, sources: usize) -> Vec<Vec<f64>> {
    (0..n_leads)
        .map(|i| (0..sources).map(|j| (PI * (i as f64 + 0.5) * (j as f64 + 0.5) / n_leads as f64).cos()).collect())
        .collect()
}

impl OracleConfig {
    pub fn mixing_matrix(&self) -> Vec<Vec<f64>> {
        self.mixing.clone().unwrap_or_else(|| default_mixing(self.n_leads, self.latent_sources))
    }

    pub fn template(&self, j: usize) -> SourceTemplate {
        self.templates.as_ref().and_then(|t| t.get(j).copied()).unwrap_or_else(|| SourceTemplate::for_source(j))
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < LeadSet::MIN_LENGTH || self.n_leads == 0 || self.latent_sources == 0 {
            return Err(Error::invalid("oracle needs length >= 16, >= 1 lead and >= 1 source"));
        }
        if !(self.sample_rate_hz > 0.0) || !(self.noise_std >= 0.0) || !(self.amplitude_jitter >= 0.0) {
            return Err(Error::invalid("sample rate must be positive and noise/jitter non-negative"));
        }
        let (lo, hi) = self.heart_rate_bpm;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid(format!("bad heart-rate range ({lo}, {hi})")));
        }
        if self.classes.is_empty() || self.records_per_patient == 0 || self.n_folds == 0 {
            return Err(Error::invalid("classes, records_per_patient and n_folds must be non-empty"));
        }
        if let Some(t) = &self.templates {
            if t.len() != self.latent_sources {
                return Err(Error::invalid("one template per latent source required"));
            }
        }
        let m = self.mixing_matrix();
        if m.len() != self.n_leads || m.iter().any(|row| row.len() != self.latent_sources) {
            return Err(Error::ShapeMismatch(format!(
                "mixing matrix must be {} x {}",
                self.n_leads, self.latent_sources
            )));
        }
        let mat = DMatrix::from_fn(self.n_leads, self.latent_sources, |i, j| m[i][j]);
        let rank = mat.rank(1e-10);
        if rank < self.latent_sources {
            return Err(Error::RankDeficient { rank, sources: self.latent_sources });
        }
        Ok(())
    }
}

struct Draw {
    latents: Vec<Vec<f64>>,
    meta: RecordMeta,
    rng: rng::Rng,
}

fn bump_train(out: &mut [f64], shape: BumpShape, width_scale: f64, gain: f64, beat_times: &[f64], sample_rate: f64) {
    let sigma = shape.width_s * width_scale;
    let two_var = 2.0 * sigma * sigma;
    for &beat in beat_times {
        let centre = beat + shape.offset_s;
        for (n, o) in out.iter_mut().enumerate() {
            let dt = n as f64 / sample_rate - centre;
            if dt.abs() < 6.0 * sigma {
                *o += gain * shape.amplitude * (-dt * dt / two_var).exp();
            }
        }
    }
}

fn draw_record(cfg: &OracleConfig, seed: u64, index: usize) -> Draw {
    let mut draw = rng::stream(rng::child_seed(seed, index as u64), streams::ORACLE_RECORDS);
    let patient_id = (index / cfg.records_per_patient) as u64;
    // rotate by one class per pass over the folds so every fold sees every class
    let slot = patient_id + patient_id / cfg.n_folds as u64;
    let class = cfg.classes[(slot % cfg.classes.len() as u64) as usize];

    let mut meta_rng = rng::stream(rng::child_seed(seed, patient_id), streams::ORACLE_META);
    let age_years = meta_rng.random_range(5.0..95.0f64).floor();
    let gender = if meta_rng.random_bool(0.5) { Gender::Male } else { Gender::Female };

    let (lo, hi) = cfg.heart_rate_bpm;
    let hr = if hi > lo { draw.random_range(lo..hi) } else { lo };
    let rr = 60.0 / hr;
    let duration = cfg.length as f64 / cfg.sample_rate_hz;
    let phase = draw.random_range(0.0..rr);
    let mut beat_times = Vec::new();
    let mut t = phase - rr;
    while t < duration + rr {
        beat_times.push(t);
        t += rr;
    }

    let jitter = (1.0 + cfg.amplitude_jitter * rng::standard_normal(&mut draw)).max(0.2);
    let demographic = (1.0 - 0.004 * (age_years - 50.0)) * if gender == Gender::Female { 0.9 } else { 1.0 };
    let class_gain = if class == OracleClass::LowVoltage { 0.4 } else { 1.0 };
    let qrs_width = if class == OracleClass::WideQrs { 2.0 } else { 1.0 };
    let gain = jitter * demographic * class_gain;

    let latents = (0..cfg.latent_sources)
        .map(|j| {
            let tpl = cfg.template(j);
            let mut s = vec![0.0; cfg.length];
            bump_train(&mut s, tpl.p, 1.0, gain, &beat_times, cfg.sample_rate_hz);
            bump_train(&mut s, tpl.qrs, qrs_width, gain, &beat_times, cfg.sample_rate_hz);
            bump_train(&mut s, tpl.t, 1.0, gain, &beat_times, cfg.sample_rate_hz);
            s
        })
        .collect();

    let mut form = BTreeSet::new();
    if class == OracleClass::LowVoltage {
        form.insert(0);
    }
    let rhythm = BTreeSet::from([if hr < 60.0 { 1 } else { 0 }]);
    let meta = RecordMeta { patient_id, age_years, gender, diagnostic: BTreeSet::from([class.label()]), form, rhythm };
    Draw { latents, meta, rng: draw }
}

/// Latent source trains `[latent_sources, length]` of every record, exactly as
/// used by [`make_oracle_dataset`] for the same `(cfg, seed)`.
pub fn oracle_latents(cfg: &OracleConfig, seed: u64) -> Result<Vec<Tensor>> {
    cfg.validate()?;
    Ok((0..cfg.n_records)
        .into_par_iter()
        .map(|i| {
            let d = draw_record(cfg, seed, i);
            Tensor::matrix(cfg.latent_sources, cfg.length, d.latents.concat())
        })
        .collect())
}

/// Records are `M * latent bump trains + noise`, quantized to `f32` so the
/// dataset round-trips bit-exactly through the on-disk format. Patient `p`
/// owns records `p * rpp .. (p + 1) * rpp` and lives in fold `p % n_folds + 1`.
/// Classes are assigned per patient, round-robin within each fold.
pub fn make_oracle_dataset(cfg: &OracleConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let m = cfg.mixing_matrix();
    let records: Vec<Record> = (0..cfg.n_records)
        .into_par_iter()
        .map(|i| {
            let Draw { latents, meta, rng: mut noise } = draw_record(cfg, seed, i);
            let mut samples = vec![0.0; cfg.length * cfg.n_leads];
            for t in 0..cfg.length {
                for c in 0..cfg.n_leads {
                    let mut v: f64 = (0..cfg.latent_sources).map(|j| m[c][j] * latents[j][t]).sum();
                    if cfg.noise_std > 0.0 {
                        v += cfg.noise_std * rng::standard_normal(&mut noise);
                    }
                    samples[t * cfg.n_leads + c] = v as f32 as f64;
                }
            }
            let fold = (meta.patient_id % cfg.n_folds as u64) as u8 + 1;
            let leads = LeadSet::new(cfg.length, cfg.n_leads, cfg.sample_rate_hz, samples)
                .expect("generator output is well formed");
            Record { leads, meta, fold }
        })
        .collect();
    Dataset::new(records)
}
