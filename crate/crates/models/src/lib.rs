//! Sequence models over design embeddings (reconstruction, next-step
//! prediction, and a variational baseline), flow-based density estimation of
//! final-step latents, preference and sequential-Frechet evaluation, and
//! autoregressive design completion.

pub mod autocomplete;
pub mod error;
pub mod evaluate;
pub mod flow;
pub mod pipeline;
pub mod sequence;

pub use autocomplete::{apply_mapping, rollout, rollout_latents, RolloutConfig};
pub use error::{ModelError, Result};
pub use evaluate::{
    flow_preference, gaussian_stats, matrix_sqrt_psd, preference_experiment, sequential_fid,
    vae_preference, GaussianStats, Judge, PreferencePoint, PreferenceVerdict, Winner,
};
pub use flow::{FlowModel, FlowTrainConfig, FlowTrainReport};
pub use pipeline::{corrupted_sample, record_to_sample, states_to_sample, states_to_tensor, SeqSample};
pub use sequence::{
    AccuracyReport, ForwardOutput, ModelKind, SequenceModel, TrainConfig, TrainReport,
};
