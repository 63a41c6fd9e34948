//! Random finite-difference instances, one builder per op kind plus the full
//! training objective.
//!
//! Inputs are nudged away from non-differentiable points (relu and abs at 0,
//! sqrt near 0, the log floor) so central differences never straddle a kink.

use std::collections::BTreeMap;

use midt_core::conditioning::conditioning_node;
use midt_core::diffusion::{forward_noise, make_schedule, total_loss_node, Objective};
use midt_core::net::denoiser_node;
use midt_core::rng::{self, child_seed, Rng};
use midt_core::signal::{Gender, RecordMeta};
use midt_core::tensor::Bindings;
use midt_core::{ComputeGraph, DiffusionModel, GroupMask, LeadSet, MidtConfig, NetConfig, Tensor};

pub const OP_KINDS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "mul_scalar",
    "mul_column",
    "mul_row",
    "scale",
    "add_scalar",
    "matmul",
    "conv1d",
    "frame",
    "slice_rows",
    "concat_rows",
    "concat_cols",
    "transpose",
    "relu",
    "tanh",
    "log_floor",
    "abs",
    "sqrt",
    "square",
    "sum",
    "mean",
    "row_mean",
    "softmax_xent",
];

pub const FD_EPSILON: f64 = 1e-6;

/// Integer in `lo..=hi` derived from `(seed, k)`.
fn pick(seed: u64, k: u64, lo: usize, hi: usize) -> usize {
    lo + (child_seed(seed, k) % (hi - lo + 1) as u64) as usize
}

fn away_from_zero(v: f64) -> f64 {
    v + 0.05 * v.signum()
}

struct Builder {
    g: ComputeGraph,
    params: BTreeMap<String, Tensor>,
    rng: Rng,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self { g: ComputeGraph::new(), params: BTreeMap::new(), rng: rng::stream(seed, 0xfd) }
    }

    fn draw(&mut self, shape: &[usize], f: impl Fn(f64) -> f64) -> Tensor {
        let n = shape.iter().product();
        let data = rng::normal_vec(&mut self.rng, n, 1.0).into_iter().map(f).collect();
        Tensor::new(shape.to_vec(), data)
    }

    fn leaf(&mut self, name: &str, shape: &[usize], f: impl Fn(f64) -> f64) -> midt_core::tensor::NodeId {
        let t = self.draw(shape, f);
        self.params.insert(name.to_string(), t);
        self.g.param(name)
    }

    /// Contracts `out` with a random weight of the same shape so every output
    /// coordinate contributes to the scalar root, then checks every parameter.
    fn finish(mut self, out: midt_core::tensor::NodeId) -> f64 {
        self.g.evaluate(&Bindings::new().with(&self.params)).expect("op instance evaluates");
        let shape = self.g.value(out).expect("evaluated").shape().to_vec();
        let w = self.draw(&shape, |v| v);
        let w = self.g.constant(w);
        let m = self.g.mul(out, w);
        self.g.sum(m);
        self.g.evaluate(&Bindings::new().with(&self.params)).expect("root evaluates");
        let names: Vec<String> = self.params.keys().cloned().collect();
        names.iter().map(|n| self.g.finite_difference_check(n, FD_EPSILON).expect("fd check runs")).fold(0.0, f64::max)
    }
}

/// Largest relative error between backprop and central differences over a
/// random instance of `kind`.
pub fn op_rel_error(kind: &str, seed: u64) -> f64 {
    let (r, c) = (pick(seed, 1, 2, 5), pick(seed, 2, 2, 5));
    let id = |v: f64| v;
    let mut b = Builder::new(seed);
    let out = match kind {
        "add" | "sub" | "mul" => {
            let x = b.leaf("a", &[r, c], id);
            let y = b.leaf("b", &[r, c], id);
            match kind {
                "add" => b.g.add(x, y),
                "sub" => b.g.sub(x, y),
                _ => b.g.mul(x, y),
            }
        }
        "mul_scalar" | "mul_column" | "mul_row" => {
            let x = b.leaf("a", &[r, c], id);
            let shape = match kind {
                "mul_scalar" => vec![1],
                "mul_column" => vec![r, 1],
                _ => vec![1, c],
            };
            let y = b.leaf("b", &shape, id);
            b.g.mul(x, y)
        }
        "scale" => {
            let x = b.leaf("a", &[r, c], id);
            b.g.scale(x, -1.7)
        }
        "add_scalar" => {
            let x = b.leaf("a", &[r, c], id);
            b.g.add_scalar(x, 0.3)
        }
        "matmul" => {
            let k = pick(seed, 3, 1, 5);
            let x = b.leaf("a", &[r, k], id);
            let y = b.leaf("b", &[k, c], id);
            b.g.matmul(x, y)
        }
        "conv1d" => {
            let (c_out, k, dil) = (pick(seed, 3, 1, 4), pick(seed, 4, 1, 3) * 2 - 1, pick(seed, 5, 1, 3));
            let len = pick(seed, 6, 6, 16);
            let x = b.leaf("a", &[r, len], id);
            let w = b.leaf("b", &[c_out, r, k], id);
            b.g.conv1d(x, w, dil)
        }
        "frame" => {
            let (window, hop) = (pick(seed, 3, 2, 6), pick(seed, 4, 1, 3));
            let len = window + pick(seed, 5, 0, 10);
            let x = b.leaf("a", &[r, len], id);
            b.g.frame(x, window, hop)
        }
        "slice_rows" => {
            let rows = r + 2;
            let start = pick(seed, 3, 0, rows - 1);
            let len = pick(seed, 4, 1, rows - start);
            let x = b.leaf("a", &[rows, c], id);
            b.g.slice_rows(x, start, len)
        }
        "concat_rows" => {
            let x = b.leaf("a", &[r, c], id);
            let y = b.leaf("b", &[pick(seed, 3, 1, 4), c], id);
            b.g.concat(&[x, y], 0)
        }
        "concat_cols" => {
            let x = b.leaf("a", &[r, c], id);
            let y = b.leaf("b", &[r, pick(seed, 3, 1, 4)], id);
            b.g.concat(&[x, y], 1)
        }
        "transpose" => {
            let x = b.leaf("a", &[r, c], id);
            b.g.transpose(x)
        }
        "relu" => {
            let x = b.leaf("a", &[r, c], away_from_zero);
            b.g.relu(x)
        }
        "tanh" => {
            let x = b.leaf("a", &[r, c], id);
            b.g.tanh(x)
        }
        "log_floor" => {
            // half the entries sit well above the floor, half well below it
            let x = b.leaf("a", &[r, c], |v| if v > 0.0 { v + 0.2 } else { 0.01 * v.abs().min(2.0) });
            b.g.log_floor(x, 0.05)
        }
        "abs" => {
            let x = b.leaf("a", &[r, c], away_from_zero);
            b.g.abs(x)
        }
        "sqrt" => {
            let x = b.leaf("a", &[r, c], |v| v.abs() + 0.1);
            b.g.sqrt(x)
        }
        "square" => {
            let x = b.leaf("a", &[r, c], id);
            b.g.square(x)
        }
        "sum" | "mean" | "row_mean" => {
            let x = b.leaf("a", &[r, c], id);
            match kind {
                "sum" => b.g.sum(x),
                "mean" => b.g.mean(x),
                _ => b.g.row_mean(x),
            }
        }
        "softmax_xent" => {
            let n = r + c;
            let x = b.leaf("a", &[n], id);
            b.g.softmax_cross_entropy(x, pick(seed, 3, 0, n - 1))
        }
        other => panic!("unknown op kind {other}"),
    };
    b.finish(out)
}

/// Small denoiser and spectral setup for full-objective checks.
pub fn small_model(seed: u64) -> DiffusionModel {
    let net = NetConfig { hidden: 4, n_blocks: 2, dilations: vec![1, 2], kernel_size: 3, step_embedding_dim: 4 };
    let sched = make_schedule(200, 1e-4, 0.02).unwrap();
    DiffusionModel::new(net, sched, GroupMask::all(), 2, seed).unwrap()
}

fn meta(seed: u64) -> RecordMeta {
    RecordMeta {
        patient_id: seed,
        age_years: 20.0 + (seed % 60) as f64,
        gender: if seed % 2 == 0 { Gender::Male } else { Gender::Female },
        diagnostic: [(seed % 5) as usize].into(),
        form: [(seed % 3) as usize].into(),
        rhythm: [0].into(),
    }
}

/// Largest relative error over sampled coordinates of every parameter of the
/// full objective `MSE + beta * MIDT` for one random record, step and noise.
pub fn full_loss_rel_error(seed: u64, coords_per_param: usize) -> f64 {
    let model = small_model(seed);
    let len = 32;
    let mut r = rng::stream(seed, 0xf0);
    let x0 = LeadSet::new(len, 2, 100.0, rng::normal_vec(&mut r, len * 2, 0.5)).unwrap();
    let eps = LeadSet::new(len, 2, 100.0, rng::normal_vec(&mut r, len * 2, 1.0)).unwrap();
    let t = pick(seed, 7, 1, 200);
    let x_t = forward_noise(&x0, t, &eps, &model.schedule).unwrap();
    let obj = Objective::new(0.5, MidtConfig::with_windows(100.0, &[8, 16]).unwrap()).unwrap();

    let mut g = ComputeGraph::new();
    let x0n = g.constant(x0.to_channels());
    let xtn = g.constant(x_t.to_channels());
    let en = g.constant(eps.to_channels());
    let c = conditioning_node(&mut g, &meta(seed), &model.mask).unwrap();
    let eps_hat = denoiser_node(&mut g, &model.net, xtn, t, c);
    total_loss_node(&mut g, x0n, xtn, en, eps_hat, model.schedule.alpha_bar(t), &obj);
    g.evaluate(&Bindings::new().with(model.params.values())).unwrap();

    let mut worst = 0.0f64;
    for (k, (name, value)) in model.params.values().iter().enumerate() {
        let n = value.len();
        let coords: Vec<usize> =
            (0..coords_per_param.min(n)).map(|j| pick(child_seed(seed, k as u64), j as u64, 0, n - 1)).collect();
        worst = worst.max(g.finite_difference_check_coords(name, FD_EPSILON, &coords).unwrap());
    }
    worst
}
