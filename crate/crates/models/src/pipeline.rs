//! Turning stored episodes into model inputs: replay, subsample, embed.

use massing_core::dataset::{subsample_states, DesignSequence, EpisodeRecord};
use massing_core::gym::replay_free;
use massing_core::voxel::{encode_state, DesignState, GridPartition};
use massing_core::agent::horizon_policy_actions;
use massing_neural::Tensor;

use crate::error::Result;

/// One model-ready sequence: stacked embeddings plus the partition needed to
/// decode predictions back into states.
#[derive(Debug, Clone)]
pub struct SeqSample {
    pub embeddings: Tensor,
    pub partition: GridPartition,
}

impl SeqSample {
    pub fn len(&self) -> usize {
        self.embeddings.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Stack state embeddings into a [T, volume] tensor.
pub fn states_to_tensor(states: &[DesignState]) -> Tensor {
    let volume = states[0].partition().volume();
    let mut data = Vec::with_capacity(states.len() * volume);
    for state in states {
        data.extend_from_slice(encode_state(state).values());
    }
    Tensor::from_vec(&[states.len(), volume], data).expect("shape matches data")
}

pub fn states_to_sample(states: &[DesignState], max_len: usize) -> SeqSample {
    let subsampled = subsample_states(states, max_len);
    SeqSample {
        embeddings: states_to_tensor(&subsampled),
        partition: states[0].partition().clone(),
    }
}

/// Replay a record through episode semantics, subsample, and embed.
pub fn record_to_sample(record: &EpisodeRecord, max_len: usize) -> Result<SeqSample> {
    let seq = DesignSequence::from_record(record)?;
    Ok(states_to_sample(&seq.states, max_len))
}

/// How far the expert is followed before switching to random play.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionLevel {
    /// Fraction of the expert trace, scaled per episode.
    Fraction(f64),
    /// Absolute number of expert steps.
    Steps(usize),
}

impl CorruptionLevel {
    pub fn horizon(self, expert_len: usize) -> usize {
        match self {
            CorruptionLevel::Fraction(f) => ((expert_len as f64) * f).round() as usize,
            CorruptionLevel::Steps(s) => s.min(expert_len),
        }
    }

    /// Numeric label for reports.
    pub fn value(self) -> f64 {
        match self {
            CorruptionLevel::Fraction(f) => f,
            CorruptionLevel::Steps(s) => s as f64,
        }
    }
}

/// Corrupted counterpart of a record: follow the expert to the given level,
/// then a random policy, materialized without episode termination semantics.
pub fn corrupted_sample(
    record: &EpisodeRecord,
    level: CorruptionLevel,
    seed: u64,
    max_len: usize,
) -> Result<SeqSample> {
    let horizon = level.horizon(record.actions.len());
    let actions = horizon_policy_actions(&record.constraints, &record.partition, horizon, seed)?;
    let states = replay_free(&record.partition, &actions)?;
    Ok(states_to_sample(&states, max_len))
}
