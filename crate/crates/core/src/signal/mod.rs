//! Multi-lead records, the parametric oracle generator, patient-level splits,
//! and the on-disk dataset format.

mod format;
mod oracle;

pub use format::{read_dataset, record_to_csv, write_dataset, FORMAT_VERSION, MAGIC};
pub use oracle::{
    default_mixing, make_oracle_dataset, oracle_latents, BumpShape, OracleClass, OracleConfig, SourceTemplate,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DIAGNOSTIC_LABELS: usize = 40;
pub const FORM_LABELS: usize = 19;
pub const RHYTHM_LABELS: usize = 12;

/// `length x n_leads` samples in mV, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadSet {
    length: usize,
    n_leads: usize,
    sample_rate_hz: f64,
    samples: Vec<f64>,
}

impl LeadSet {
    pub const MIN_LENGTH: usize = 16;

    pub fn new(length: usize, n_leads: usize, sample_rate_hz: f64, samples: Vec<f64>) -> Result<Self> {
        if length < Self::MIN_LENGTH {
            return Err(Error::invalid(format!("lead length {length} < {}", Self::MIN_LENGTH)));
        }
        if n_leads == 0 {
            return Err(Error::invalid("a lead set needs at least one lead"));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::invalid(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if samples.len() != length * n_leads {
            return Err(Error::ShapeMismatch(format!("{} samples for {length} x {n_leads}", samples.len())));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("lead set contains non-finite samples"));
        }
        Ok(Self { length, n_leads, sample_rate_hz, samples })
    }

    /// Builds from per-lead sequences.
    pub fn from_leads(leads: &[Vec<f64>], sample_rate_hz: f64) -> Result<Self> {
        let n_leads = leads.len();
        let length = leads.first().map_or(0, Vec::len);
        if leads.iter().any(|l| l.len() != length) {
            return Err(Error::ShapeMismatch("leads differ in length".into()));
        }
        let mut samples = vec![0.0; length * n_leads];
        for (c, lead) in leads.iter().enumerate() {
            for (t, &v) in lead.iter().enumerate() {
                samples[t * n_leads + c] = v;
            }
        }
        Self::new(length, n_leads, sample_rate_hz, samples)
    }

    /// Builds from a channels-first `[n_leads, length]` tensor.
    pub fn from_channels(t: &Tensor, sample_rate_hz: f64) -> Result<Self> {
        let (c, l) = match t.shape() {
            [c, l] => (*c, *l),
            s => return Err(Error::ShapeMismatch(format!("expected [leads, length], got {s:?}"))),
        };
        Self::new(l, c, sample_rate_hz, t.transpose().into_data())
    }

    pub fn zeros_like(&self) -> Self {
        Self { samples: vec![0.0; self.samples.len()], ..self.clone() }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn n_leads(&self) -> usize {
        self.n_leads
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Time-major samples.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn get(&self, t: usize, lead: usize) -> f64 {
        self.samples[t * self.n_leads + lead]
    }

    pub fn lead(&self, c: usize) -> Vec<f64> {
        (0..self.length).map(|t| self.get(t, c)).collect()
    }

    pub fn same_shape(&self, other: &LeadSet) -> bool {
        self.length == other.length && self.n_leads == other.n_leads
    }

    /// Channels-first `[n_leads, length]` tensor.
    pub fn to_channels(&self) -> Tensor {
        Tensor::matrix(self.length, self.n_leads, self.samples.clone()).transpose()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { samples: self.samples.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    /// Rounds every sample to the nearest `f32`.
    pub fn quantize_f32(&self) -> Self {
        self.map(|v| v as f32 as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn index(self) -> usize {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub patient_id: u64,
    pub age_years: f64,
    pub gender: Gender,
    pub diagnostic: BTreeSet<usize>,
    pub form: BTreeSet<usize>,
    pub rhythm: BTreeSet<usize>,
}

impl RecordMeta {
    pub fn validate(&self) -> Result<()> {
        let check = |group: &'static str, set: &BTreeSet<usize>, size: usize| match set.iter().find(|&&i| i >= size) {
            Some(&index) => Err(Error::LabelOutOfRange { group, index, size }),
            None => Ok(()),
        };
        check("diagnostic", &self.diagnostic, DIAGNOSTIC_LABELS)?;
        check("form", &self.form, FORM_LABELS)?;
        check("rhythm", &self.rhythm, RHYTHM_LABELS)?;
        if !(self.age_years >= 0.0) {
            return Err(Error::invalid(format!("age must be non-negative, got {}", self.age_years)));
        }
        Ok(())
    }

    /// Desk-scale class id: the lowest diagnostic label, if any.
    pub fn class(&self) -> Option<usize> {
        self.diagnostic.iter().next().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub leads: LeadSet,
    pub meta: RecordMeta,
    /// Patient-level fold, `1..=10` by default.
    pub fold: u8,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let ds = Self { records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every patient lives in one fold; all records share one shape.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<u64, u8> = BTreeMap::new();
        for r in &self.records {
            r.meta.validate()?;
            if let Some(&fold) = seen.get(&r.meta.patient_id) {
                if fold != r.fold {
                    return Err(Error::PatientLeak { patient: r.meta.patient_id, a: fold, b: r.fold });
                }
            }
            seen.insert(r.meta.patient_id, r.fold);
        }
        if let Some(first) = self.records.first() {
            if self.records.iter().any(|r| !r.leads.same_shape(&first.leads)) {
                return Err(Error::ShapeMismatch("records differ in shape".into()));
            }
        }
        Ok(())
    }

    pub fn folds(&self) -> BTreeSet<u8> {
        self.records.iter().map(|r| r.fold).collect()
    }

    pub fn in_folds(&self, folds: &[u8]) -> Dataset {
        Dataset { records: self.records.iter().filter(|r| folds.contains(&r.fold)).cloned().collect() }
    }

    pub fn leadsets(&self) -> Vec<LeadSet> {
        self.records.iter().map(|r| r.leads.clone()).collect()
    }

    pub fn patient_ids(&self) -> BTreeSet<u64> {
        self.records.iter().map(|r| r.meta.patient_id).collect()
    }
}

/// Splits by fold so that no patient crosses splits. Returns
/// `(train, validation, test)`.
pub fn patient_split(
    ds: &Dataset,
    train_folds: &[u8],
    val_folds: &[u8],
    test_folds: &[u8],
) -> Result<(Dataset, Dataset, Dataset)> {
    for &f in train_folds {
        if val_folds.contains(&f) || test_folds.contains(&f) {
            return Err(Error::OverlappingFolds(f));
        }
    }
    if let Some(&f) = val_folds.iter().find(|f| test_folds.contains(f)) {
        return Err(Error::OverlappingFolds(f));
    }
    ds.validate()?;
    Ok((ds.in_folds(train_folds), ds.in_folds(val_folds), ds.in_folds(test_folds)))
}

/// Wraps an already-decoded external recording.
///
/// PTB-XL records at 100 Hz decode to a `1000 x 12` matrix, time-major, with
/// leads ordered I, II, III, aVR, aVL, aVF, V1..V6 and amplitudes in mV. Any
/// source with that layout can be passed here as a flat row-major slice; no
/// dataset ships with this crate.
pub fn leadset_from_row_major(samples: &[f32], length: usize, n_leads: usize, sample_rate_hz: f64) -> Result<LeadSet> {
    LeadSet::new(length, n_leads, sample_rate_hz, samples.iter().map(|&v| v as f64).collect())
}
