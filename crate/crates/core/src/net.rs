//! The noise-prediction network.
//!
//! A stack of residual blocks over a `[hidden, len]` activation. Every block
//! runs a dilated convolution and then modulates its output channel-wise by
//! the patient vector: `h <- h * (1 + gamma_k(c)) + delta_k(c)`. The step
//! index enters once, as a sinusoidal embedding added after the input
//! projection.
//!
//! Block layer interface: a block maps `(h: [hidden, len], c: [160, 1])` to a
//! new `[hidden, len]` activation using only parameters under its own
//! `net.block{k}.` prefix, so a different sequence layer can replace the
//! convolution without touching the conditioning path.

use serde::{Deserialize, Serialize};

use crate::conditioning::{ConditioningVector, CONDITIONING_DIM};
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::signal::LeadSet;
use crate::tensor::{Bindings, ComputeGraph, NodeId, ParameterStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: usize,
    pub n_blocks: usize,
    /// Cycled when there are more blocks than entries.
    pub dilations: Vec<usize>,
    pub kernel_size: usize,
    pub step_embedding_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden: 32, n_blocks: 4, dilations: vec![1, 2, 4, 8], kernel_size: 3, step_embedding_dim: 32 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.hidden == 0 || self.kernel_size == 0 {
            return Err(Error::invalid("n_blocks, hidden and kernel_size must be >= 1"));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::invalid("dilations must be non-empty and positive"));
        }
        if self.step_embedding_dim < 2 || self.step_embedding_dim % 2 != 0 {
            return Err(Error::invalid("step embedding dim must be even and >= 2"));
        }
        Ok(())
    }

    pub fn dilation(&self, block: usize) -> usize {
        self.dilations[block % self.dilations.len()]
    }

    /// Samples seen by one output position.
    pub fn receptive_field(&self) -> usize {
        (0..self.n_blocks).map(|b| self.dilation(b) * (self.kernel_size - 1)).sum::<usize>() + 1
    }

    /// Closed-form number of scalars in [`init_params`] for `n_leads` leads.
    pub fn parameter_count(&self, n_leads: usize) -> usize {
        let (h, e, k, c) = (self.hidden, self.step_embedding_dim, self.kernel_size, CONDITIONING_DIM);
        let input = h * n_leads + h;
        let step = e * e + e + h * e + h;
        let block = h * h * k + h + 2 * (h * c + h) + h * h + h;
        let output = n_leads * h + n_leads;
        input + step + self.n_blocks * block + output
    }
}

fn block_name(block: usize, part: &str) -> String {
    format!("net.block{block}.{part}")
}

/// Parameter names and shapes, in a stable order.
pub fn param_shapes(cfg: &NetConfig, n_leads: usize) -> Vec<(String, Vec<usize>)> {
    let (h, e, k, c) = (cfg.hidden, cfg.step_embedding_dim, cfg.kernel_size, CONDITIONING_DIM);
    let mut out = vec![
        ("net.in.w".to_string(), vec![h, n_leads]),
        ("net.in.b".to_string(), vec![h, 1]),
        ("net.step.w1".to_string(), vec![e, e]),
        ("net.step.b1".to_string(), vec![e, 1]),
        ("net.step.w2".to_string(), vec![h, e]),
        ("net.step.b2".to_string(), vec![h, 1]),
    ];
    for b in 0..cfg.n_blocks {
        out.push((block_name(b, "conv.w"), vec![h, h, k]));
        out.push((block_name(b, "conv.b"), vec![h, 1]));
        out.push((block_name(b, "gamma.w"), vec![h, c]));
        out.push((block_name(b, "gamma.b"), vec![h, 1]));
        out.push((block_name(b, "delta.w"), vec![h, c]));
        out.push((block_name(b, "delta.b"), vec![h, 1]));
        out.push((block_name(b, "res.w"), vec![h, h]));
        out.push((block_name(b, "res.b"), vec![h, 1]));
    }
    out.push(("net.out.w".to_string(), vec![n_leads, h]));
    out.push(("net.out.b".to_string(), vec![n_leads, 1]));
    out
}

/// Seeded `N(0, 0.02^2)` weights, zero biases, zero output projection.
pub fn init_params(cfg: &NetConfig, n_leads: usize, seed: u64) -> Result<ParameterStore> {
    cfg.validate()?;
    let mut r = rng::stream(seed, streams::NET_INIT);
    let mut store = ParameterStore::new();
    for (name, shape) in param_shapes(cfg, n_leads) {
        let n: usize = shape.iter().product();
        let zero =
            name.starts_with("net.out.") || name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2");
        let data = if zero { vec![0.0; n] } else { rng::normal_vec(&mut r, n, 0.02) };
        store.insert(name, Tensor::new(shape, data));
    }
    Ok(store)
}

/// Sinusoidal embedding of the diffusion step, `[dim, 1]`.
pub fn step_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut v = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / (half.max(2) - 1) as f64).exp();
        let arg = t as f64 * freq;
        v[i] = arg.sin();
        v[i + half] = arg.cos();
    }
    Tensor::column(v)
}

/// Builds the network on `x_t` (`[n_leads, len]`) and `c` (`[160, 1]`);
/// returns the predicted noise node, `[n_leads, len]`.
pub fn denoiser_node(g: &mut ComputeGraph, cfg: &NetConfig, x_t: NodeId, t: usize, c: NodeId) -> NodeId {
    let w_in = g.param("net.in.w");
    let b_in = g.param("net.in.b");
    let h = g.matmul(w_in, x_t);
    let h = g.add(h, b_in);

    let emb = g.constant(step_embedding(t, cfg.step_embedding_dim));
    let w1 = g.param("net.step.w1");
    let b1 = g.param("net.step.b1");
    let s = g.matmul(w1, emb);
    let s = g.add(s, b1);
    let s = g.tanh(s);
    let w2 = g.param("net.step.w2");
    let b2 = g.param("net.step.b2");
    let s = g.matmul(w2, s);
    let s = g.add(s, b2);
    let mut h = g.add(h, s);

    for b in 0..cfg.n_blocks {
        h = block_node(g, cfg, b, h, c);
    }

    let h = g.relu(h);
    let w_out = g.param("net.out.w");
    let b_out = g.param("net.out.b");
    let y = g.matmul(w_out, h);
    g.add(y, b_out)
}

fn block_node(g: &mut ComputeGraph, cfg: &NetConfig, b: usize, h: NodeId, c: NodeId) -> NodeId {
    let w = g.param(&block_name(b, "conv.w"));
    let bias = g.param(&block_name(b, "conv.b"));
    let z = g.conv1d(h, w, cfg.dilation(b));
    let z = g.add(z, bias);

    let gw = g.param(&block_name(b, "gamma.w"));
    let gb = g.param(&block_name(b, "gamma.b"));
    let gamma = g.matmul(gw, c);
    let gamma = g.add(gamma, gb);
    let dw = g.param(&block_name(b, "delta.w"));
    let db = g.param(&block_name(b, "delta.b"));
    let delta = g.matmul(dw, c);
    let delta = g.add(delta, db);
    // z * (1 + gamma) + delta
    let zg = g.mul(z, gamma);
    let z = g.add(z, zg);
    let z = g.add(z, delta);
    let z = g.tanh(z);

    let rw = g.param(&block_name(b, "res.w"));
    let rb = g.param(&block_name(b, "res.b"));
    let r = g.matmul(rw, z);
    let r = g.add(r, rb);
    g.add(h, r)
}

/// Plain forward pass.
pub fn denoise_forward(
    cfg: &NetConfig,
    params: &ParameterStore,
    x_t: &LeadSet,
    t: usize,
    c: &ConditioningVector,
) -> Result<LeadSet> {
    if c.0.len() != CONDITIONING_DIM {
        return Err(Error::ShapeMismatch(format!("conditioning vector has length {}", c.0.len())));
    }
    if t == 0 {
        return Err(Error::invalid("diffusion step must be >= 1"));
    }
    let mut g = ComputeGraph::new();
    let x = g.constant(x_t.to_channels());
    let cn = g.constant(c.to_column());
    denoiser_node(&mut g, cfg, x, t, cn);
    let out = g.evaluate(&Bindings::new().with(params.values()))?;
    LeadSet::from_channels(&out, x_t.sample_rate_hz())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::Group;

    fn random_params(cfg: &NetConfig, n_leads: usize) -> ParameterStore {
        // non-zero output projection so the network is live
        let mut p = init_params(cfg, n_leads, 3).unwrap();
        let mut r = rng::stream(99, 0);
        let w = p.get_mut("net.out.w").unwrap();
        let n = w.len();
        w.data_mut().copy_from_slice(&rng::normal_vec(&mut r, n, 0.5));
        p
    }

    fn signal(n_leads: usize, len: usize) -> LeadSet {
        let data = (0..len * n_leads).map(|i| (i as f64 * 0.37).sin()).collect();
        LeadSet::new(len, n_leads, 100.0, data).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_output_zero() {
        let cfg = NetConfig::default();
        let a = init_params(&cfg, 2, 1).unwrap();
        assert_eq!(a, init_params(&cfg, 2, 1).unwrap());
        assert!(a.get("net.out.w").unwrap().data().iter().all(|&v| v == 0.0));
        let y = denoise_forward(&cfg, &a, &signal(2, 32), 5, &ConditioningVector::zeros()).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_formula() {
        for cfg in [
            NetConfig::default(),
            NetConfig { hidden: 8, n_blocks: 2, dilations: vec![1, 3], kernel_size: 5, step_embedding_dim: 6 },
        ] {
            for leads in [1, 2, 12] {
                assert_eq!(init_params(&cfg, leads, 0).unwrap().scalar_count(), cfg.parameter_count(leads));
            }
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let cfg = NetConfig { hidden: 8, ..NetConfig::default() };
        let p = random_params(&cfg, 3);
        for len in [16, 37, 64] {
            let y = denoise_forward(&cfg, &p, &signal(3, len), 10, &ConditioningVector::zeros()).unwrap();
            assert_eq!((y.length(), y.n_leads()), (len, 3));
        }
    }

    #[test]
    fn age_segment_changes_output() {
        let cfg = NetConfig { hidden: 8, ..NetConfig::default() };
        let p = random_params(&cfg, 2);
        let x = signal(2, 32);
        let c0 = ConditioningVector::zeros();
        let mut c1 = c0.clone();
        for i in Group::Age.segment() {
            c1.0[i] = 0.5;
        }
        let a = denoise_forward(&cfg, &p, &x, 7, &c0).unwrap();
        let b = denoise_forward(&cfg, &p, &x, 7, &c1).unwrap();
        let diff = a.samples().iter().zip(b.samples()).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        assert!(diff > 0.0);
    }

    #[test]
    fn every_block_reads_conditioning() {
        let cfg = NetConfig { hidden: 8, ..NetConfig::default() };
        let x = signal(2, 32);
        let c0 = ConditioningVector::zeros();
        let c1 = ConditioningVector(vec![0.3; CONDITIONING_DIM]);
        let sensitivity = |p: &ParameterStore| {
            let a = denoise_forward(&cfg, p, &x, 3, &c0).unwrap();
            let b = denoise_forward(&cfg, p, &x, 3, &c1).unwrap();
            a.samples().iter().zip(b.samples()).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
        };
        let zero_block = |p: &mut ParameterStore, b: usize| {
            for part in ["gamma.w", "delta.w"] {
                p.get_mut(&block_name(b, part)).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        };
        let base = random_params(&cfg, 2);
        assert!(sensitivity(&base) > 0.0);
        for keep in 0..cfg.n_blocks {
            // only block `keep` still sees c
            let mut p = base.clone();
            (0..cfg.n_blocks).filter(|&b| b != keep).for_each(|b| zero_block(&mut p, b));
            assert!(sensitivity(&p) > 0.0, "block {keep} ignores c");
            zero_block(&mut p, keep);
            assert_eq!(sensitivity(&p), 0.0);
        }
    }

    #[test]
    fn receptive_field() {
        assert_eq!(NetConfig::default().receptive_field(), 31);
    }
}
