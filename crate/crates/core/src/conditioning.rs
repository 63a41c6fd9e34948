//! Group-wise patient conditioning.
//!
//! Each attribute group (diagnostic, form, rhythm, age bin, gender) is encoded
//! as its own indicator vector `y_k`, projected by a dedicated table
//! `W_k: size_k x 32`, and the five 32-wide embeddings are concatenated into
//! the 160-wide vector `c`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::signal::{RecordMeta, DIAGNOSTIC_LABELS, FORM_LABELS, RHYTHM_LABELS};
use crate::tensor::{ComputeGraph, NodeId, ParameterStore, Tensor};

pub const EMBEDDING_DIM: usize = 32;
pub const AGE_CUTOFFS: [f64; 5] = [12.0, 17.0, 34.0, 54.0, 74.0];
pub const AGE_BINS: usize = AGE_CUTOFFS.len() + 1;
pub const GENDER_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Diagnostic,
    Form,
    Rhythm,
    Age,
    Gender,
}

impl Group {
    /// Fixed concatenation order.
    pub const ORDER: [Group; 5] = [Group::Diagnostic, Group::Form, Group::Rhythm, Group::Age, Group::Gender];

    pub fn size(self) -> usize {
        match self {
            Group::Diagnostic => DIAGNOSTIC_LABELS,
            Group::Form => FORM_LABELS,
            Group::Rhythm => RHYTHM_LABELS,
            Group::Age => AGE_BINS,
            Group::Gender => GENDER_CLASSES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Diagnostic => "diagnostic",
            Group::Form => "form",
            Group::Rhythm => "rhythm",
            Group::Age => "age",
            Group::Gender => "gender",
        }
    }

    pub fn position(self) -> usize {
        Self::ORDER.iter().position(|&g| g == self).unwrap()
    }

    /// Offset of this group's segment within `c`.
    pub fn segment(self) -> std::ops::Range<usize> {
        let start = self.position() * EMBEDDING_DIM;
        start..start + EMBEDDING_DIM
    }

    pub fn table_name(self) -> String {
        format!("cond.{}", self.name())
    }
}

pub const CONDITIONING_DIM: usize = EMBEDDING_DIM * Group::ORDER.len();

/// Which groups contribute; masked groups yield zero segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupMask {
    pub diagnostic: bool,
    pub form: bool,
    pub rhythm: bool,
    pub age: bool,
    pub gender: bool,
}

impl Default for GroupMask {
    fn default() -> Self {
        Self::all()
    }
}

impl GroupMask {
    pub fn all() -> Self {
        Self { diagnostic: true, form: true, rhythm: true, age: true, gender: true }
    }

    /// Clinical labels only.
    pub fn labels_only() -> Self {
        Self { age: false, gender: false, ..Self::all() }
    }

    pub fn with_age() -> Self {
        Self { age: true, ..Self::labels_only() }
    }

    pub fn with_gender() -> Self {
        Self { gender: true, ..Self::labels_only() }
    }

    pub fn enabled(&self, g: Group) -> bool {
        match g {
            Group::Diagnostic => self.diagnostic,
            Group::Form => self.form,
            Group::Rhythm => self.rhythm,
            Group::Age => self.age,
            Group::Gender => self.gender,
        }
    }
}

/// Bin index = number of cutoffs strictly below the age.
pub fn age_bin(age_years: f64) -> Result<usize> {
    if !(age_years >= 0.0) {
        return Err(Error::invalid(format!("age must be non-negative, got {age_years}")));
    }
    Ok(AGE_CUTOFFS.iter().filter(|&&c| age_years > c).count())
}

pub fn encode_age(age_years: f64) -> Result<Vec<f64>> {
    let mut v = vec![0.0; AGE_BINS];
    v[age_bin(age_years)?] = 1.0;
    Ok(v)
}

/// Multi-hot `(diagnostic, form, rhythm)` indicators.
pub fn encode_label_groups(meta: &RecordMeta) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    meta.validate()?;
    let hot = |set: &std::collections::BTreeSet<usize>, n: usize| {
        let mut v = vec![0.0; n];
        set.iter().for_each(|&i| v[i] = 1.0);
        v
    };
    Ok((hot(&meta.diagnostic, DIAGNOSTIC_LABELS), hot(&meta.form, FORM_LABELS), hot(&meta.rhythm, RHYTHM_LABELS)))
}

/// All five indicator vectors in [`Group::ORDER`], masked groups zeroed.
pub fn encode_groups(meta: &RecordMeta, mask: &GroupMask) -> Result<Vec<Vec<f64>>> {
    let (diag, form, rhythm) = encode_label_groups(meta)?;
    let age = encode_age(meta.age_years)?;
    let mut gender = vec![0.0; GENDER_CLASSES];
    gender[meta.gender.index()] = 1.0;
    let mut out = vec![diag, form, rhythm, age, gender];
    for (g, v) in Group::ORDER.iter().zip(&mut out) {
        if !mask.enabled(*g) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    Ok(out)
}

/// Length-160 patient representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector(pub Vec<f64>);

impl ConditioningVector {
    pub fn zeros() -> Self {
        Self(vec![0.0; CONDITIONING_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn segment(&self, g: Group) -> &[f64] {
        &self.0[g.segment()]
    }

    pub fn to_column(&self) -> Tensor {
        Tensor::column(self.0.clone())
    }
}

/// Seeded `N(0, 0.02^2)` tables, one per group.
pub fn init_embedding_tables(seed: u64) -> ParameterStore {
    let mut r = rng::stream(seed, streams::COND_INIT);
    let mut store = ParameterStore::new();
    for g in Group::ORDER {
        let data = rng::normal_vec(&mut r, g.size() * EMBEDDING_DIM, 0.02);
        store.insert(g.table_name(), Tensor::matrix(g.size(), EMBEDDING_DIM, data));
    }
    store
}

fn check_table(g: Group, t: &Tensor) -> Result<()> {
    if t.shape() != [g.size(), EMBEDDING_DIM] {
        return Err(Error::ShapeMismatch(format!(
            "table {} has shape {:?}, schema wants [{}, {EMBEDDING_DIM}]",
            g.table_name(),
            t.shape(),
            g.size()
        )));
    }
    Ok(())
}

/// `c = concat_k(W_k^T y_k)`.
pub fn build_conditioning_vector(
    meta: &RecordMeta,
    tables: &ParameterStore,
    mask: &GroupMask,
) -> Result<ConditioningVector> {
    let ys = encode_groups(meta, mask)?;
    let mut c = Vec::with_capacity(CONDITIONING_DIM);
    for (g, y) in Group::ORDER.iter().zip(&ys) {
        let table = tables
            .get(&g.table_name())
            .ok_or_else(|| Error::ShapeMismatch(format!("missing table {}", g.table_name())))?;
        check_table(*g, table)?;
        let mut e = vec![0.0; EMBEDDING_DIM];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                let row = &table.data()[i * EMBEDDING_DIM..(i + 1) * EMBEDDING_DIM];
                e.iter_mut().zip(row).for_each(|(a, &w)| *a += yi * w);
            }
        }
        c.extend(e);
    }
    Ok(ConditioningVector(c))
}

/// Graph form of [`build_conditioning_vector`] with the tables as trainable
/// leaves. Returns a `[160, 1]` column.
pub fn conditioning_node(g: &mut ComputeGraph, meta: &RecordMeta, mask: &GroupMask) -> Result<NodeId> {
    let ys = encode_groups(meta, mask)?;
    let mut parts = Vec::with_capacity(ys.len());
    for (group, y) in Group::ORDER.iter().zip(ys) {
        let y = g.constant(Tensor::matrix(1, group.size(), y));
        let table = g.param(&group.table_name());
        parts.push(g.matmul(y, table));
    }
    let row = g.concat(&parts, 1);
    Ok(g.transpose(row))
}

/// CSV rows `patient_id,c_0,...,c_159`.
pub fn write_conditioning_csv(rows: &[(u64, ConditioningVector)], out: &mut impl Write) -> Result<()> {
    write!(out, "patient_id")?;
    for i in 0..CONDITIONING_DIM {
        write!(out, ",c_{i}")?;
    }
    writeln!(out)?;
    for (pid, c) in rows {
        write!(out, "{pid}")?;
        for v in &c.0 {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
