//! Spectrally informed diffusion for multi-lead quasi-ECG synthesis.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine, a
//! synthetic multi-lead signal generator, the multi-resolution log-mel loss,
//! grouped patient conditioning, a conditional denoising diffusion model, and
//! the evaluation suite used to judge synthetic records.

pub mod conditioning;
pub mod diffusion;
pub mod downstream;
pub mod error;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod signal;
pub mod spectro;
pub mod tensor;

pub use conditioning::{ConditioningVector, Group, GroupMask, CONDITIONING_DIM};
pub use diffusion::{DiffusionModel, NoiseSchedule, TrainConfig};
pub use error::{Error, Result};
pub use net::NetConfig;
pub use signal::{Dataset, LeadSet, Record, RecordMeta};
pub use spectro::MidtConfig;
pub use tensor::{ComputeGraph, ParameterStore, Tensor};
