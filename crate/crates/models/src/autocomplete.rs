//! Autoregressive design completion.
//!
//! The raw sigmoid output of the next-step model is quantized back onto room
//! codes and merged against the previous state by a mapping rule that never
//! deletes an occupied voxel: decoded-empty positions keep their previous
//! room, while type changes pass through.

use rayon::prelude::*;

use massing_core::voxel::{decode_embedding, DesignEmbedding, DesignState, RoomType};

use crate::error::{ModelError, Result};
use crate::pipeline::states_to_tensor;
use crate::sequence::{ModelKind, SequenceModel};

#[derive(Debug, Clone, Copy)]
pub struct RolloutConfig {
    pub prefix_len: usize,
    pub horizon: usize,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prefix_len == 0 {
            return Err(ModelError::Usage("prefix_len must be at least 1".into()));
        }
        if self.horizon <= self.prefix_len {
            return Err(ModelError::Usage(
                "horizon must exceed the prefix length".into(),
            ));
        }
        Ok(())
    }
}

/// Merge a raw predicted embedding against the previous state: occupied
/// voxels never revert to empty, though their type may change.
pub fn apply_mapping(prev: &DesignState, raw: &DesignEmbedding) -> Result<DesignState> {
    let decoded = decode_embedding(raw, prev.partition())?;
    let mut merged = decoded.clone();
    let (nx, ny, nz) = prev.dims();
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let before = prev.get(x, y, z);
                if before != RoomType::Empty && decoded.get(x, y, z) == RoomType::Empty {
                    merged.set(x, y, z, before);
                }
            }
        }
    }
    Ok(merged)
}

/// Greedy autoregressive completion: feed the states so far, take the last
/// position's prediction, merge it through [`apply_mapping`], and append,
/// until `horizon` states exist. When the sequence outgrows the model's
/// trained length, a sliding window over the most recent states is used.
pub fn rollout(
    model: &SequenceModel,
    prefix: &[DesignState],
    config: &RolloutConfig,
) -> Result<Vec<DesignState>> {
    if model.kind != ModelKind::Avd {
        return Err(ModelError::Kind {
            expected: "avd",
            actual: model.kind.as_str().to_string(),
        });
    }
    config.validate()?;
    if prefix.len() != config.prefix_len {
        return Err(ModelError::Usage(format!(
            "prefix has {} states, config says {}",
            prefix.len(),
            config.prefix_len
        )));
    }

    let mut states = prefix.to_vec();
    while states.len() < config.horizon {
        let window_start = states.len().saturating_sub(model.config.max_len);
        let window = &states[window_start..];
        let embeddings = states_to_tensor(window);
        let out = model.forward(&embeddings)?;
        let (t, _) = out.predictions.dims2();
        let raw = DesignEmbedding::from_raw(out.predictions.row(t - 1).to_vec());
        let next = apply_mapping(states.last().expect("prefix is non-empty"), &raw)?;
        states.push(next);
    }
    Ok(states)
}

/// Latents for every rollout, grouped by timestep: result[t][r] is rollout
/// r's latent at step t. Feeds the sequential Frechet evaluation.
pub fn rollout_latents(
    encoder: &SequenceModel,
    rollouts: &[Vec<DesignState>],
) -> Result<Vec<Vec<Vec<f64>>>> {
    if rollouts.is_empty() {
        return Err(ModelError::Usage("no rollouts".into()));
    }
    let per_rollout: Vec<Vec<Vec<f64>>> = rollouts
        .par_iter()
        .map(|states| -> Result<Vec<Vec<f64>>> {
            let mut latents: Vec<Vec<f64>> = Vec::with_capacity(states.len());
            if states.len() <= encoder.config.max_len {
                let out = encoder.forward(&states_to_tensor(states))?;
                for t in 0..states.len() {
                    latents.push(out.latents.row(t).to_vec());
                }
            } else {
                // One window per position past the trained length.
                let out = encoder.forward(&states_to_tensor(&states[..encoder.config.max_len]))?;
                for t in 0..encoder.config.max_len {
                    latents.push(out.latents.row(t).to_vec());
                }
                for t in encoder.config.max_len..states.len() {
                    let window = &states[t + 1 - encoder.config.max_len..=t];
                    let out = encoder.forward(&states_to_tensor(window))?;
                    let (rows, _) = out.latents.dims2();
                    latents.push(out.latents.row(rows - 1).to_vec());
                }
            }
            Ok(latents)
        })
        .collect::<Result<Vec<_>>>()?;

    let steps = per_rollout.iter().map(|l| l.len()).min().unwrap_or(0);
    let mut by_t = vec![Vec::with_capacity(rollouts.len()); steps];
    for latents in &per_rollout {
        for (t, z) in latents.iter().take(steps).enumerate() {
            by_t[t].push(z.clone());
        }
    }
    Ok(by_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use massing_core::voxel::{encode_state, GridPartition};
    use massing_neural::AttentionConfig;

    fn tiny_model() -> SequenceModel {
        SequenceModel::new(
            ModelKind::Avd,
            AttentionConfig {
                layers: 1,
                heads: 2,
                model_dim: 8,
                input_dim: 27,
                max_len: 6,
            },
            3,
        )
        .unwrap()
    }

    fn small_state() -> DesignState {
        DesignState::empty(GridPartition::uniform(3, 3, 3, 6.0, 4.0))
    }

    #[test]
    fn mapping_fixed_point_on_reencoded_states() {
        let mut state = small_state();
        state.set(0, 0, 0, RoomType::Office);
        state.set(1, 2, 1, RoomType::Lobby);
        let raw = encode_state(&state);
        assert_eq!(apply_mapping(&state, &raw).unwrap(), state);
    }

    #[test]
    fn mapping_keeps_occupied_voxels_and_allows_type_changes() {
        let mut prev = small_state();
        prev.set(1, 1, 1, RoomType::Office);

        // Raw decodes the voxel to empty: the previous room survives.
        let empty_raw = DesignEmbedding::new(vec![0.0; 27]).unwrap();
        let kept = apply_mapping(&prev, &empty_raw).unwrap();
        assert_eq!(kept.get(1, 1, 1), RoomType::Office);

        // Raw decodes it to a different type: the change goes through.
        let mut retyped = prev.clone();
        retyped.set(1, 1, 1, RoomType::Corridor);
        let changed = apply_mapping(&prev, &encode_state(&retyped)).unwrap();
        assert_eq!(changed.get(1, 1, 1), RoomType::Corridor);
    }

    #[test]
    fn rollout_preserves_prefix_length_monotonicity_and_determinism() {
        let model = tiny_model();
        let mut s0 = small_state();
        s0.set(0, 0, 0, RoomType::Elevator);
        let mut s1 = s0.clone();
        s1.set(1, 0, 0, RoomType::Office);
        let prefix = vec![s0, s1];
        let cfg = RolloutConfig {
            prefix_len: 2,
            horizon: 10,
        };
        let states = rollout(&model, &prefix, &cfg).unwrap();
        assert_eq!(states.len(), 10);
        assert_eq!(&states[..2], &prefix[..]);
        for pair in states.windows(2) {
            assert!(pair[1].occupied_count() >= pair[0].occupied_count());
            // Monotone as voxel sets, not just counts.
            for (a, b) in pair[0].rooms().iter().zip(pair[1].rooms()) {
                assert!(!(a.is_occupied() && !b.is_occupied()));
            }
        }
        let again = rollout(&model, &prefix, &cfg).unwrap();
        assert_eq!(states, again);
    }

    #[test]
    fn rollout_rejects_wrong_kind_and_bad_config() {
        let vdr = SequenceModel::new(
            ModelKind::Vdr,
            AttentionConfig {
                layers: 1,
                heads: 2,
                model_dim: 8,
                input_dim: 27,
                max_len: 6,
            },
            3,
        )
        .unwrap();
        let prefix = vec![small_state()];
        let cfg = RolloutConfig {
            prefix_len: 1,
            horizon: 4,
        };
        assert!(matches!(
            rollout(&vdr, &prefix, &cfg),
            Err(ModelError::Kind { .. })
        ));

        let bad = RolloutConfig {
            prefix_len: 3,
            horizon: 2,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rollout_latents_group_by_timestep() {
        let model = tiny_model();
        let prefix = vec![small_state()];
        let cfg = RolloutConfig {
            prefix_len: 1,
            horizon: 9, // past max_len, exercising the sliding window
        };
        let rollouts: Vec<Vec<DesignState>> = (0..3)
            .map(|_| rollout(&model, &prefix, &cfg).unwrap())
            .collect();
        let by_t = rollout_latents(&model, &rollouts).unwrap();
        assert_eq!(by_t.len(), 9);
        for group in &by_t {
            assert_eq!(group.len(), 3);
            assert_eq!(group[0].len(), 8);
        }
        let again = rollout_latents(&model, &rollouts).unwrap();
        assert_eq!(by_t, again);
    }
}
