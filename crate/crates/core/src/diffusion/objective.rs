use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::signal::LeadSet;
use crate::spectro::{midt_loss_node, MidtConfig};
use crate::tensor::{Bindings, ComputeGraph, NodeId};

fn same_shape(a: &LeadSet, b: &LeadSet, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.length(),
            a.n_leads(),
            b.length(),
            b.n_leads()
        )));
    }
    Ok(())
}

/// `x_t = sqrt(ab) x0 + sqrt(1 - ab) eps`.
pub fn forward_noise(x0: &LeadSet, t: usize, eps: &LeadSet, sched: &NoiseSchedule) -> Result<LeadSet> {
    sched.check(t)?;
    same_shape(x0, eps, "noise")?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0.samples().iter().zip(eps.samples()).map(|(x, e)| a * x + b * e).collect();
    LeadSet::new(x0.length(), x0.n_leads(), x0.sample_rate_hz(), data)
}

/// `x0_hat = (x_t - sqrt(1 - ab) eps_hat) / sqrt(ab)`.
pub fn reconstruct_x0(x_t: &LeadSet, eps_hat: &LeadSet, t: usize, sched: &NoiseSchedule) -> Result<LeadSet> {
    sched.check(t)?;
    same_shape(x_t, eps_hat, "predicted noise")?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x_t.samples().iter().zip(eps_hat.samples()).map(|(x, e)| (x - b * e) / a).collect();
    LeadSet::new(x_t.length(), x_t.n_leads(), x_t.sample_rate_hz(), data)
}

/// Loss weights plus the spectral configuration.
#[derive(Debug, Clone)]
pub struct Objective {
    pub midt_weight: f64,
    pub midt: MidtConfig,
}

impl Objective {
    pub fn new(midt_weight: f64, midt: MidtConfig) -> Result<Self> {
        if !(midt_weight >= 0.0) || !midt_weight.is_finite() {
            return Err(Error::invalid(format!("midt weight must be finite and >= 0, got {midt_weight}")));
        }
        Ok(Self { midt_weight, midt })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    pub midt: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub mse: NodeId,
    pub midt: NodeId,
    pub total: NodeId,
}

/// Adds the objective to `g`. `x_t`, `x0`, `eps` and `eps_hat` are
/// channels-first `[leads, len]` nodes. The total node is the root.
///
/// With a zero weight the total is the noise MSE node itself; the spectral
/// term is still built so it can be logged.
pub fn total_loss_node(
    g: &mut ComputeGraph,
    x0: NodeId,
    x_t: NodeId,
    eps: NodeId,
    eps_hat: NodeId,
    alpha_bar: f64,
    obj: &Objective,
) -> LossNodes {
    let d = g.sub(eps_hat, eps);
    let sq = g.square(d);
    let mse = g.mean(sq);

    let noise = g.scale(eps_hat, (1.0 - alpha_bar).sqrt());
    let num = g.sub(x_t, noise);
    let x0_hat = g.scale(num, 1.0 / alpha_bar.sqrt());
    let midt = midt_loss_node(g, x0_hat, x0, &obj.midt);

    let total = if obj.midt_weight == 0.0 {
        // re-emit as the last node so it is the root
        g.scale(mse, 1.0)
    } else {
        let w = g.scale(midt, obj.midt_weight);
        g.add(mse, w)
    };
    LossNodes { mse, midt, total }
}

/// Value form of the objective for one record.
pub fn total_loss(
    x0: &LeadSet,
    t: usize,
    eps: &LeadSet,
    eps_hat: &LeadSet,
    sched: &NoiseSchedule,
    obj: &Objective,
) -> Result<LossParts> {
    sched.check(t)?;
    same_shape(x0, eps, "noise")?;
    same_shape(x0, eps_hat, "predicted noise")?;
    for r in &obj.midt.resolutions {
        r.stft.check(x0.length())?;
    }
    let x_t = forward_noise(x0, t, eps, sched)?;
    let mut g = ComputeGraph::new();
    let x0n = g.constant(x0.to_channels());
    let xtn = g.constant(x_t.to_channels());
    let en = g.constant(eps.to_channels());
    let ehn = g.constant(eps_hat.to_channels());
    let nodes = total_loss_node(&mut g, x0n, xtn, en, ehn, sched.alpha_bar(t), obj);
    g.evaluate(&Bindings::new())?;
    let v = |n| g.value(n).and_then(|t| t.item()).expect("evaluated scalar");
    Ok(LossParts { mse: v(nodes.mse), midt: v(nodes.midt), total: v(nodes.total) })
}
