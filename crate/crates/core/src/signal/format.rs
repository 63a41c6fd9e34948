//! Dataset files.
//!
//! A dataset at base path `P` is two files:
//!
//! * `P.toml`, the header, with fields in this order: `magic` (`"MIDT"`),
//!   `version`, `record_count`, `n_leads`, `length`, `sample_rate_hz`,
//!   `payload` (file name of the blob), then one `[[records]]` table per record
//!   holding `patient_id`, `fold`, `age_years`, `gender`, `diagnostic`, `form`,
//!   `rhythm`.
//! * `P.bin`, the payload: the 4 bytes `MIDT`, the version as `u32` LE, the
//!   record count as `u64` LE, then every record's samples as `f32` LE,
//!   time-major (`length x n_leads`), records in header order.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Gender, LeadSet, Record, RecordMeta};
use crate::error::{Error, Result};

pub const MAGIC: &str = "MIDT";
pub const FORMAT_VERSION: u32 = 1;
const BLOB_PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    magic: String,
    version: u32,
    record_count: usize,
    n_leads: usize,
    length: usize,
    sample_rate_hz: f64,
    payload: String,
    #[serde(default)]
    records: Vec<RecordHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordHeader {
    patient_id: u64,
    fold: u8,
    age_years: f64,
    gender: Gender,
    diagnostic: BTreeSet<usize>,
    form: BTreeSet<usize>,
    rhythm: BTreeSet<usize>,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("toml"), base.with_extension("bin"))
}

/// Writes `base.toml` and `base.bin`. Samples are stored as `f32`.
pub fn write_dataset(ds: &Dataset, base: &Path) -> Result<()> {
    ds.validate()?;
    let (header_path, blob_path) = paths(base);
    let first = ds.records.first();
    let header = Header {
        magic: MAGIC.to_string(),
        version: FORMAT_VERSION,
        record_count: ds.len(),
        n_leads: first.map_or(0, |r| r.leads.n_leads()),
        length: first.map_or(0, |r| r.leads.length()),
        sample_rate_hz: first.map_or(100.0, |r| r.leads.sample_rate_hz()),
        payload: blob_path.file_name().unwrap().to_string_lossy().into_owned(),
        records: ds
            .records
            .iter()
            .map(|r| RecordHeader {
                patient_id: r.meta.patient_id,
                fold: r.fold,
                age_years: r.meta.age_years,
                gender: r.meta.gender,
                diagnostic: r.meta.diagnostic.clone(),
                form: r.meta.form.clone(),
                rhythm: r.meta.rhythm.clone(),
            })
            .collect(),
    };
    let text = toml::to_string(&header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    fs::write(&header_path, text)?;

    let mut blob = Vec::with_capacity(BLOB_PREAMBLE + ds.len() * header.n_leads * header.length * 4);
    blob.extend_from_slice(MAGIC.as_bytes());
    blob.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    blob.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for r in &ds.records {
        for &v in r.leads.samples() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::File::create(&blob_path)?.write_all(&blob)?;
    Ok(())
}

pub fn read_dataset(base: &Path) -> Result<Dataset> {
    let (header_path, _) = paths(base);
    let text = fs::read_to_string(&header_path)?;
    let header: Header = toml::from_str(&text).map_err(|e| Error::MalformedHeader(e.message().to_string()))?;
    if header.magic != MAGIC {
        return Err(Error::BadMagic(header.magic));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(header.version));
    }
    if header.records.len() != header.record_count {
        return Err(Error::MalformedHeader(format!(
            "record_count {} but {} record entries",
            header.record_count,
            header.records.len()
        )));
    }
    let blob_path = header_path.with_file_name(&header.payload);
    let blob = fs::read(&blob_path)?;
    if blob.len() < BLOB_PREAMBLE {
        return Err(Error::PayloadLength { expected: BLOB_PREAMBLE, actual: blob.len() });
    }
    if &blob[..4] != MAGIC.as_bytes() {
        return Err(Error::BadMagic(String::from_utf8_lossy(&blob[..4]).into_owned()));
    }
    let version = u32::from_le_bytes(blob[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = u64::from_le_bytes(blob[8..16].try_into().unwrap()) as usize;
    if count != header.record_count {
        return Err(Error::MalformedHeader(format!(
            "payload holds {count} records, header says {}",
            header.record_count
        )));
    }
    let per_record = header.n_leads * header.length;
    let expected = BLOB_PREAMBLE + count * per_record * 4;
    if blob.len() != expected {
        return Err(Error::PayloadLength { expected, actual: blob.len() });
    }
    let mut records = Vec::with_capacity(count);
    for (i, rh) in header.records.into_iter().enumerate() {
        let start = BLOB_PREAMBLE + i * per_record * 4;
        let samples = blob[start..start + per_record * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let leads = LeadSet::new(header.length, header.n_leads, header.sample_rate_hz, samples)?;
        let meta = RecordMeta {
            patient_id: rh.patient_id,
            age_years: rh.age_years,
            gender: rh.gender,
            diagnostic: rh.diagnostic,
            form: rh.form,
            rhythm: rh.rhythm,
        };
        records.push(Record { leads, meta, fold: rh.fold });
    }
    Dataset::new(records)
}

/// CSV with a `t_s` column followed by one column per lead.
pub fn record_to_csv(leads: &LeadSet, out: &mut impl Write) -> Result<()> {
    write!(out, "t_s")?;
    for c in 0..leads.n_leads() {
        write!(out, ",lead_{c}")?;
    }
    writeln!(out)?;
    for t in 0..leads.length() {
        write!(out, "{}", t as f64 / leads.sample_rate_hz())?;
        for c in 0..leads.n_leads() {
            write!(out, ",{}", leads.get(t, c))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
