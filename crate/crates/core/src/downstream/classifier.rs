use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::signal::{Dataset, LeadSet, Record, RecordMeta};
use crate::tensor::{AdamConfig, Bindings, ComputeGraph, NodeId, ParameterStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub n_classes: usize,
    pub hidden: usize,
    pub kernel_size: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { n_classes: 3, hidden: 8, kernel_size: 5, steps: 300, batch_size: 16, learning_rate: 5e-3, seed: 0 }
    }
}

/// Anything that assigns class probabilities to a record.
pub trait Scorer {
    fn n_classes(&self) -> usize;
    fn is_trained(&self) -> bool;
    fn class_probs(&self, x: &LeadSet) -> Result<Vec<f64>>;
}

/// Two dilated convolution blocks, global average pooling and a linear head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub cfg: ClassifierConfig,
    pub n_leads: usize,
    pub params: ParameterStore,
    /// Mean cross-entropy of the last training step; `None` before training.
    pub final_loss: Option<f64>,
}

fn logits_node(g: &mut ComputeGraph, x: NodeId) -> NodeId {
    let w1 = g.param("clf.conv1.w");
    let b1 = g.param("clf.conv1.b");
    let h = g.conv1d(x, w1, 1);
    let h = g.add(h, b1);
    let h = g.relu(h);
    let w2 = g.param("clf.conv2.w");
    let b2 = g.param("clf.conv2.b");
    let h = g.conv1d(h, w2, 2);
    let h = g.add(h, b2);
    let h = g.relu(h);
    let pooled = g.row_mean(h);
    let wh = g.param("clf.head.w");
    let bh = g.param("clf.head.b");
    let y = g.matmul(wh, pooled);
    g.add(y, bh)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Classifier {
    pub fn new(cfg: &ClassifierConfig, n_leads: usize) -> Result<Self> {
        if cfg.n_classes < 2 || cfg.hidden == 0 || cfg.kernel_size == 0 || n_leads == 0 {
            return Err(Error::invalid("classifier needs >= 2 classes and non-empty layers"));
        }
        let (h, k, c) = (cfg.hidden, cfg.kernel_size, n_leads);
        let mut r = rng::stream(cfg.seed, streams::CLASSIFIER_INIT);
        let mut params = ParameterStore::new();
        let mut he = |name: &str, shape: Vec<usize>, fan_in: usize| {
            let n = shape.iter().product();
            params.insert(name, Tensor::new(shape, rng::normal_vec(&mut r, n, (2.0 / fan_in as f64).sqrt())));
        };
        he("clf.conv1.w", vec![h, c, k], c * k);
        he("clf.conv2.w", vec![h, h, k], h * k);
        he("clf.head.w", vec![cfg.n_classes, h], h);
        params.insert("clf.conv1.b", Tensor::zeros(&[h, 1]));
        params.insert("clf.conv2.b", Tensor::zeros(&[h, 1]));
        params.insert("clf.head.b", Tensor::zeros(&[cfg.n_classes, 1]));
        Ok(Self { cfg: cfg.clone(), n_leads, params, final_loss: None })
    }

    pub fn logits(&self, x: &LeadSet) -> Result<Vec<f64>> {
        if x.n_leads() != self.n_leads {
            return Err(Error::ShapeMismatch(format!("classifier has {} leads, input {}", self.n_leads, x.n_leads())));
        }
        let mut g = ComputeGraph::new();
        let xn = g.constant(x.to_channels());
        logits_node(&mut g, xn);
        Ok(g.evaluate(&Bindings::new().with(self.params.values()))?.into_data())
    }
}

impl Scorer for Classifier {
    fn n_classes(&self) -> usize {
        self.cfg.n_classes
    }

    fn is_trained(&self) -> bool {
        self.final_loss.is_some()
    }

    fn class_probs(&self, x: &LeadSet) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }
}

fn label(r: &Record, n_classes: usize) -> Result<usize> {
    let c = r
        .meta
        .class()
        .ok_or_else(|| Error::invalid(format!("patient {} has no diagnostic label", r.meta.patient_id)))?;
    if c >= n_classes {
        return Err(Error::LabelOutOfRange { group: "class", index: c, size: n_classes });
    }
    Ok(c)
}

/// Seeded mini-batch Adam on softmax cross-entropy. Each record's class is its
/// lowest diagnostic label.
pub fn train_classifier(data: &Dataset, cfg: &ClassifierConfig) -> Result<Classifier> {
    let first = data.records.first().ok_or(Error::Empty("classifier training set"))?;
    let labels = data.records.iter().map(|r| label(r, cfg.n_classes)).collect::<Result<Vec<_>>>()?;
    if labels.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::SingleClass);
    }
    let mut clf = Classifier::new(cfg, first.leads.n_leads())?;
    let adam = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
    let mut r = rng::stream(cfg.seed, streams::CLASSIFIER_BATCH);
    let batch = cfg.batch_size.max(1);
    let mut last = f64::NAN;
    for step in 0..cfg.steps {
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        let mut loss = 0.0;
        for _ in 0..batch {
            let i = r.random_range(0..data.len());
            let mut g = ComputeGraph::new();
            let xn = g.constant(data.records[i].leads.to_channels());
            let logits = logits_node(&mut g, xn);
            g.softmax_cross_entropy(logits, labels[i]);
            loss += g.evaluate(&Bindings::new().with(clf.params.values()))?.data()[0] / batch as f64;
            for (name, gr) in g.backpropagate(&Tensor::scalar(1.0))? {
                match grads.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(gr.data()).for_each(|(a, b)| *a += b / batch as f64),
                    None => {
                        grads.insert(name, gr.map(|v| v / batch as f64));
                    }
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite { step });
        }
        clf.params.optimizer_step(&grads, &adam)?;
        last = loss;
    }
    clf.final_loss = Some(last);
    Ok(clf)
}

/// Copy of `data` with the metadata permuted across records by a seeded
/// shuffle, breaking any link between signal and label.
pub fn shuffle_labels(data: &Dataset, seed: u64) -> Result<Dataset> {
    let mut metas: Vec<_> = data.records.iter().map(|r| r.meta.clone()).collect();
    metas.shuffle(&mut rng::stream(seed, streams::SHUFFLE));
    let records = data
        .records
        .iter()
        .zip(metas)
        .map(|(r, meta)| Record {
            leads: r.leads.clone(),
            meta: RecordMeta { patient_id: r.meta.patient_id, ..meta },
            fold: r.fold,
        })
        .collect();
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{make_oracle_dataset, OracleClass, OracleConfig};

    fn data(n: usize) -> Dataset {
        let cfg = OracleConfig {
            n_records: n,
            n_leads: 2,
            length: 64,
            latent_sources: 2,
            classes: vec![OracleClass::Normal, OracleClass::WideQrs],
            ..OracleConfig::default()
        };
        make_oracle_dataset(&cfg, 3).unwrap()
    }

    fn small_cfg(steps: usize) -> ClassifierConfig {
        ClassifierConfig { n_classes: 2, steps, batch_size: 8, ..ClassifierConfig::default() }
    }

    #[test]
    fn deterministic() {
        let d = data(20);
        let a = train_classifier(&d, &small_cfg(5)).unwrap();
        let b = train_classifier(&d, &small_cfg(5)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.final_loss, b.final_loss);
    }

    #[test]
    fn single_class_rejected() {
        let d = data(20);
        let one = Dataset::new(d.records.into_iter().filter(|r| r.meta.class() == Some(0)).collect()).unwrap();
        assert!(matches!(train_classifier(&one, &small_cfg(1)), Err(Error::SingleClass)));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let d = data(4);
        let clf = Classifier::new(&small_cfg(0), 2).unwrap();
        let p = clf.class_probs(&d.records[0].leads).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(!clf.is_trained());
    }

    #[test]
    fn shuffle_keeps_patients_and_signals() {
        let d = data(30);
        let s = shuffle_labels(&d, 1).unwrap();
        for (a, b) in d.records.iter().zip(&s.records) {
            assert_eq!((a.meta.patient_id, a.fold, &a.leads), (b.meta.patient_id, b.fold, &b.leads));
        }
        assert_ne!(d, s);
    }
}
