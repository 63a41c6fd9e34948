//! Conditional denoising diffusion: schedule, objective, training, sampling.

mod objective;
mod sample;
mod schedule;
mod train;

pub use objective::{forward_noise, reconstruct_x0, total_loss, total_loss_node, LossNodes, LossParts, Objective};
pub use sample::{sample, sample_each};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig};
pub use train::{train, write_loss_trace, LossRecord, TrainConfig};

use crate::conditioning::{build_conditioning_vector, init_embedding_tables, ConditioningVector, GroupMask};
use crate::error::{Error, Result};
use crate::net::{self, NetConfig};
use crate::signal::{LeadSet, RecordMeta};
use crate::tensor::ParameterStore;

/// Network, conditioning tables and schedule, ready to train or sample.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub net: NetConfig,
    pub schedule: NoiseSchedule,
    pub mask: GroupMask,
    pub n_leads: usize,
    /// `net.*` weights and `cond.*` embedding tables.
    pub params: ParameterStore,
}

impl DiffusionModel {
    pub fn new(net: NetConfig, schedule: NoiseSchedule, mask: GroupMask, n_leads: usize, seed: u64) -> Result<Self> {
        if n_leads == 0 {
            return Err(Error::invalid("model needs at least one lead"));
        }
        let mut params = net::init_params(&net, n_leads, seed)?;
        params.extend(init_embedding_tables(seed));
        Ok(Self { net, schedule, mask, n_leads, params })
    }

    pub fn conditioning(&self, meta: &RecordMeta) -> Result<ConditioningVector> {
        build_conditioning_vector(meta, &self.params, &self.mask)
    }

    pub fn predict_noise(&self, x_t: &LeadSet, t: usize, c: &ConditioningVector) -> Result<LeadSet> {
        self.schedule.check(t)?;
        if x_t.n_leads() != self.n_leads {
            return Err(Error::ShapeMismatch(format!("model has {} leads, input {}", self.n_leads, x_t.n_leads())));
        }
        net::denoise_forward(&self.net, &self.params, x_t, t, c)
    }
}
