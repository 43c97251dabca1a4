//! Domain layer for sequential volumetric design: voxel states and their
//! unit-interval embeddings, the gym-style placement environment, the expert
//! layout agent with its randomized corruptions, and dataset tooling.

pub mod agent;
pub mod dataset;
pub mod error;
pub mod gym;
pub mod seeds;
pub mod voxel;

pub use error::{CoreError, Result};
pub use gym::{Action, EnvState, EpisodeConstraints};
pub use voxel::{
    decode_embedding, encode_state, state_diff, DesignEmbedding, DesignState, GridPartition,
    RoomType,
};
