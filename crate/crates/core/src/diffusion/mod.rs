//! Denoising diffusion: schedules, training and ancestral sampling.

pub(crate) mod image_sample;
mod model;
mod schedule;

pub use image_sample::{validate_image_shape, ImageSample};
pub use model::{
    ancestral_chain, ancestral_sample, eps_to_score, per_item_noise, prior_score, train_eps_model, train_prior,
    write_train_log, DenoiserModel, ModelSpec, TrainConfig, TrainLogRow, TrainOutputs,
};
pub(crate) use model::persist;
pub use schedule::{q_sample, q_sample_batch, NoiseSchedule, ScheduleKind};
