use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{forward_noise, total_loss_node, LossParts, Objective};
use super::DiffusionModel;
use crate::conditioning::conditioning_node;
use crate::error::{Error, Result};
use crate::net::denoiser_node;
use crate::rng::{self, streams};
use crate::signal::{Dataset, LeadSet, Record};
use crate::spectro::{MidtConfig, DEFAULT_LOG_FLOOR};
use crate::tensor::{AdamConfig, Bindings, ComputeGraph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the spectral term in the total loss.
    pub midt_weight: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// STFT window lengths; hop and mel count follow from each window.
    pub midt_windows: Vec<usize>,
    pub log_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            midt_weight: 0.1,
            batch_size: 16,
            steps: 300,
            learning_rate: 2e-3,
            seed: 0,
            midt_windows: MidtConfig::DEFAULT_WINDOWS.to_vec(),
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self, sample_rate_hz: f64) -> Result<Objective> {
        let res = MidtConfig::with_windows(sample_rate_hz, &self.midt_windows)?.resolutions;
        let midt = MidtConfig::new(res, self.log_floor)?;
        Objective::new(self.midt_weight, midt)
    }
}

/// Batch means for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub mse: f64,
    pub midt: f64,
    pub total: f64,
}

struct RecordPass {
    parts: LossParts,
    grads: BTreeMap<String, Tensor>,
}

fn record_pass(model: &DiffusionModel, obj: &Objective, rec: &Record, seed: u64) -> Result<RecordPass> {
    let mut r = rng::stream(seed, streams::TRAIN_NOISE);
    let t = r.random_range(1..=model.schedule.steps());
    let x0 = &rec.leads;
    let eps = LeadSet::new(
        x0.length(),
        x0.n_leads(),
        x0.sample_rate_hz(),
        rng::normal_vec(&mut r, x0.length() * x0.n_leads(), 1.0),
    )?;
    let x_t = forward_noise(x0, t, &eps, &model.schedule)?;

    let mut g = ComputeGraph::new();
    let x0n = g.constant(x0.to_channels());
    let xtn = g.constant(x_t.to_channels());
    let en = g.constant(eps.to_channels());
    let c = conditioning_node(&mut g, &rec.meta, &model.mask)?;
    let eps_hat = denoiser_node(&mut g, &model.net, xtn, t, c);
    let nodes = total_loss_node(&mut g, x0n, xtn, en, eps_hat, model.schedule.alpha_bar(t), obj);
    g.evaluate(&Bindings::new().with(model.params.values()))?;
    let v = |n| g.value(n).and_then(|t| t.item()).expect("evaluated scalar");
    let parts = LossParts { mse: v(nodes.mse), midt: v(nodes.midt), total: v(nodes.total) };
    let grads = g.backpropagate(&Tensor::scalar(1.0))?;
    Ok(RecordPass { parts, grads })
}

/// Trains `model` in place and returns the per-step loss trace.
///
/// Each step draws a batch with replacement; each batch slot gets its own
/// step index and noise from a seed derived from `(seed, step, slot)`, so the
/// trace depends only on the seed, config and data. Per-record gradients are
/// computed in parallel and summed in slot order.
pub fn train(data: &Dataset, model: &mut DiffusionModel, cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let first = &data.records[0].leads;
    if first.n_leads() != model.n_leads {
        return Err(Error::ShapeMismatch(format!("model has {} leads, data {}", model.n_leads, first.n_leads())));
    }
    let obj = cfg.objective(first.sample_rate_hz())?;
    for r in &obj.midt.resolutions {
        r.stft.check(first.length())?;
    }
    let adam = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let step_seed = rng::child_seed(cfg.seed, step as u64);
        let mut br = rng::stream(step_seed, streams::TRAIN_BATCH);
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| br.random_range(0..data.len())).collect();

        let snapshot = &*model;
        let passes = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| record_pass(snapshot, &obj, &data.records[i], rng::child_seed(step_seed, slot as u64)))
            .collect::<Result<Vec<_>>>()?;

        let n = passes.len() as f64;
        let mut mean = LossParts { mse: 0.0, midt: 0.0, total: 0.0 };
        let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
        for p in passes {
            mean.mse += p.parts.mse / n;
            mean.midt += p.parts.midt / n;
            mean.total += p.parts.total / n;
            for (name, gr) in p.grads {
                match grads.get_mut(&name) {
                    Some(acc) => acc.data_mut().iter_mut().zip(gr.data()).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(name, gr);
                    }
                }
            }
        }
        if !mean.total.is_finite() {
            return Err(Error::NonFinite { step });
        }
        for gr in grads.values_mut() {
            gr.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        for name in model.params.names() {
            grads
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(model.params.get(name).expect("listed").shape()));
        }
        model.params.optimizer_step(&grads, &adam)?;
        if model.params.values().values().any(|p| !p.all_finite()) {
            return Err(Error::NonFinite { step });
        }
        trace.push(LossRecord { step, mse: mean.mse, midt: mean.midt, total: mean.total });
    }
    Ok(trace)
}

/// CSV with columns `step,mse,midt,total`.
pub fn write_loss_trace(trace: &[LossRecord], out: &mut impl Write) -> Result<()> {
    writeln!(out, "step,mse,midt,total")?;
    for r in trace {
        writeln!(out, "{},{},{},{}", r.step, r.mse, r.midt, r.total)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::GroupMask;
    use crate::diffusion::ScheduleConfig;
    use crate::net::NetConfig;
    use crate::signal::{make_oracle_dataset, OracleConfig};

    fn setup(steps: usize, weight: f64) -> (Dataset, DiffusionModel, TrainConfig) {
        let data = make_oracle_dataset(
            &OracleConfig { n_records: 24, n_leads: 2, length: 64, latent_sources: 2, ..OracleConfig::default() },
            5,
        )
        .unwrap();
        let net = NetConfig { hidden: 8, n_blocks: 2, ..NetConfig::default() };
        let model =
            DiffusionModel::new(net, ScheduleConfig::default().build().unwrap(), GroupMask::all(), 2, 1).unwrap();
        let cfg = TrainConfig {
            steps,
            batch_size: 4,
            midt_weight: weight,
            midt_windows: vec![16, 32],
            ..TrainConfig::default()
        };
        (data, model, cfg)
    }

    #[test]
    fn deterministic_trace() {
        let (data, mut a, cfg) = setup(5, 0.1);
        let mut b = a.clone();
        let ta = train(&data, &mut a, &cfg).unwrap();
        let tb = train(&data, &mut b, &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_weight_logs_spectral_term() {
        let (data, mut m, cfg) = setup(3, 0.0);
        let trace = train(&data, &mut m, &cfg).unwrap();
        for r in &trace {
            assert_eq!(r.total, r.mse);
            assert!(r.midt > 0.0);
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let (_, mut m, cfg) = setup(1, 0.1);
        assert!(matches!(train(&Dataset::default(), &mut m, &cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn non_finite_loss_reports_step() {
        let (data, mut m, mut cfg) = setup(3, 0.1);
        cfg.learning_rate = f64::INFINITY;
        match train(&data, &mut m, &cfg) {
            Err(Error::NonFinite { step }) => assert!(step <= 1),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn trace_csv() {
        let mut buf = Vec::new();
        write_loss_trace(&[LossRecord { step: 0, mse: 1.0, midt: 2.0, total: 1.2 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,mse,midt,total\n0,1,2,1.2\n");
    }
}
