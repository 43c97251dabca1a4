//! Dataset generation, filtering, subsampling, splitting, and persistence.
//!
//! On disk a dataset is a JSON manifest plus one newline-delimited JSON
//! record file per split. Records store the episode constraints, partition,
//! and generating action trace; states are regenerated by replay, which
//! keeps files small and makes the trace the single source of truth.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{expert_actions, sample_episode, SampleConfig};
use crate::error::{CoreError, Result};
use crate::gym::{replay_with_dims, Action, EpisodeConstraints};
use crate::seeds;
use crate::voxel::{DesignState, GridPartition, RoomType};

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FILE: &str = "train.ndjson";
pub const EVAL_FILE: &str = "eval.ndjson";

/// One episode as persisted: constraints, partition, and the action trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub constraints: EpisodeConstraints,
    pub partition: GridPartition,
    pub actions: Vec<ActionRecord>,
}

/// Wire form of an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub room_code: u8,
}

impl From<Action> for ActionRecord {
    fn from(a: Action) -> Self {
        Self {
            x: a.x,
            y: a.y,
            z: a.z,
            room_code: a.room.code(),
        }
    }
}

impl ActionRecord {
    pub fn to_action(self) -> Result<Action> {
        let room = RoomType::from_code(self.room_code)
            .ok_or_else(|| CoreError::Format(format!("invalid room code {}", self.room_code)))?;
        Action::new(self.x, self.y, self.z, room)
    }
}

impl EpisodeRecord {
    pub fn actions(&self) -> Result<Vec<Action>> {
        self.actions.iter().map(|a| a.to_action()).collect()
    }

    /// Raw sequence length: number of states, counting the post-reset state.
    pub fn raw_len(&self) -> usize {
        self.actions.len() + 1
    }
}

/// A materialized episode: every state the trace produces.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSequence {
    pub states: Vec<DesignState>,
    pub actions: Vec<Action>,
    pub constraints: EpisodeConstraints,
}

impl DesignSequence {
    /// Replay a record through episode semantics. Errors if any step is
    /// rejected or the episode fails to terminate on its final action.
    pub fn from_record(record: &EpisodeRecord) -> Result<Self> {
        let actions = record.actions()?;
        let dims = record.partition.dims();
        let states = replay_with_dims(&record.constraints, &actions, dims)?;
        if states[0].partition() != &record.partition {
            return Err(CoreError::Replay {
                step: 0,
                detail: "partition does not match the episode seed".into(),
            });
        }
        Ok(Self {
            states,
            actions,
            constraints: record.constraints.clone(),
        })
    }
}

/// Keep every `stride`-th state from index 0, with the final state always
/// included; `stride = ceil(len / max_len)`. The action trace is carried
/// through unchanged as the sequence's provenance.
pub fn subsample(seq: &DesignSequence, max_len: usize) -> DesignSequence {
    let states = subsample_states(&seq.states, max_len);
    DesignSequence {
        states,
        actions: seq.actions.clone(),
        constraints: seq.constraints.clone(),
    }
}

/// Subsampling on a bare state list; shared by the model pipelines.
pub fn subsample_states(states: &[DesignState], max_len: usize) -> Vec<DesignState> {
    assert!(max_len >= 2, "max_len must be at least 2");
    let len = states.len();
    if len <= max_len {
        return states.to_vec();
    }
    let stride = len.div_ceil(max_len);
    let mut out: Vec<DesignState> = states.iter().step_by(stride).cloned().collect();
    if (len - 1) % stride != 0 {
        out.push(states[len - 1].clone());
    }
    out
}

/// Indices [`subsample_states`] keeps, for callers that replay lazily.
pub fn subsample_indices(len: usize, max_len: usize) -> Vec<usize> {
    assert!(max_len >= 2, "max_len must be at least 2");
    if len <= max_len {
        return (0..len).collect();
    }
    let stride = len.div_ceil(max_len);
    let mut out: Vec<usize> = (0..len).step_by(stride).collect();
    if (len - 1) % stride != 0 {
        out.push(len - 1);
    }
    out
}

/// Seeded shuffle followed by a fractional split.
pub fn split(
    records: Vec<EpisodeRecord>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<EpisodeRecord>, Vec<EpisodeRecord>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CoreError::Constraint(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut records = records;
    let mut rng = seeds::rng(seed);
    // Fisher-Yates.
    for i in (1..records.len()).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        records.swap(i, j);
    }
    let train_count = ((records.len() as f64) * train_fraction).round() as usize;
    let train_count = train_count.clamp(1, records.len().saturating_sub(1).max(1));
    let eval = records.split_off(train_count.min(records.len()));
    Ok((records, eval))
}

/// Fixed-width bucket counts over raw sequence lengths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bucket_width: f64,
    pub counts: Vec<usize>,
}

pub fn length_histogram(records: &[EpisodeRecord], bucket_width: usize) -> Histogram {
    histogram(
        records.iter().map(|r| r.raw_len() as f64),
        bucket_width as f64,
    )
}

/// Generic fixed-width bucketing, shared by the FAR and rooms-per-floor
/// report commands.
pub fn histogram(values: impl IntoIterator<Item = f64>, bucket_width: f64) -> Histogram {
    assert!(bucket_width > 0.0);
    let mut counts: Vec<usize> = Vec::new();
    for v in values {
        let bucket = (v / bucket_width).floor().max(0.0) as usize;
        if bucket >= counts.len() {
            counts.resize(bucket + 1, 0);
        }
        counts[bucket] += 1;
    }
    Histogram {
        bucket_width,
        counts,
    }
}

/// Generation settings; mirrors the run configuration's dataset block.
#[derive(Debug, Clone)]
pub struct GenerateConfig {
    pub sample: SampleConfig,
    pub min_raw_len: usize,
    pub max_subsampled_len: usize,
    pub train_fraction: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            sample: SampleConfig::default(),
            min_raw_len: 100,
            max_subsampled_len: 82,
            train_fraction: 6612.0 / 7296.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub total: usize,
    pub train: usize,
    pub eval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: String,
    pub grid_dims: [usize; 3],
    pub max_subsampled_len: usize,
    pub min_raw_len: usize,
    pub counts: ManifestCounts,
}

/// A generated dataset, ready to persist.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<EpisodeRecord>,
    pub eval: Vec<EpisodeRecord>,
}

/// Generate `n` expert episodes with per-episode seeds derived from the
/// master seed, drop those under the raw-length floor, and split.
pub fn generate(n: usize, seed: u64, config: &GenerateConfig) -> Result<Dataset> {
    if n == 0 {
        return Err(CoreError::Constraint("n must be positive".into()));
    }
    let mut records = Vec::with_capacity(n);
    for index in 0..n {
        let episode_seed = seeds::derive_seed(seed, index as u64);
        let (constraints, partition) = sample_episode(episode_seed, &config.sample)?;
        let actions = expert_actions(&constraints, &partition)?;
        if actions.len() + 1 < config.min_raw_len {
            continue;
        }
        records.push(EpisodeRecord {
            seed: episode_seed,
            constraints,
            partition,
            actions: actions.into_iter().map(ActionRecord::from).collect(),
        });
    }
    if records.is_empty() {
        return Err(CoreError::Planning(
            "every generated episode fell under the length floor".into(),
        ));
    }
    let total = records.len();
    let (train, eval) = split(records, config.train_fraction, seed)?;
    let (nx, ny, nz) = config.sample.dims;
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION.to_string(),
            grid_dims: [nx, ny, nz],
            max_subsampled_len: config.max_subsampled_len,
            min_raw_len: config.min_raw_len,
            counts: ManifestCounts {
                total,
                train: train.len(),
                eval: eval.len(),
            },
        },
        train,
        eval,
    })
}

/// Verify a record replays cleanly: the partition matches its seed, every
/// step is accepted, and the episode terminates exactly on the last action.
pub fn verify_replay(record: &EpisodeRecord) -> Result<()> {
    let seq = DesignSequence::from_record(record)?;
    let dims = record.partition.dims();
    let mut env = crate::gym::reset_with_dims(record.constraints.clone(), dims)?;
    for (step, action) in seq.actions.iter().enumerate() {
        if env.done {
            return Err(CoreError::Replay {
                step,
                detail: "episode terminated before the trace ended".into(),
            });
        }
        env = env.step(action)?;
    }
    if !env.done {
        return Err(CoreError::Replay {
            step: seq.actions.len(),
            detail: "episode did not terminate on the final action".into(),
        });
    }
    Ok(())
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = serde_json::to_string_pretty(&dataset.manifest)
        .map_err(|e| CoreError::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
    write_records(&dir.join(TRAIN_FILE), &dataset.train)?;
    write_records(&dir.join(EVAL_FILE), &dataset.eval)?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| CoreError::Format(e.to_string()))?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&manifest_text).map_err(|e| CoreError::Format(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "unsupported dataset format version {}",
            manifest.format_version
        )));
    }
    let train = read_records(&dir.join(TRAIN_FILE))?;
    let eval = read_records(&dir.join(EVAL_FILE))?;
    Ok(Dataset {
        manifest,
        train,
        eval,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(|e| CoreError::Format(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_config() -> GenerateConfig {
        GenerateConfig {
            max_subsampled_len: 40,
            train_fraction: 0.8,
            ..GenerateConfig::default()
        }
    }

    #[test]
    fn generate_is_deterministic_and_replay_valid() {
        let cfg = desk_config();
        let a = generate(12, 7, &cfg).unwrap();
        let b = generate(12, 7, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.manifest.counts.total,
            a.manifest.counts.train + a.manifest.counts.eval
        );
        assert!(a.manifest.counts.total >= 1);
        for record in a.train.iter().chain(a.eval.iter()) {
            verify_replay(record).unwrap();
        }
    }

    #[test]
    fn dataset_files_roundtrip_and_are_byte_identical() {
        let cfg = desk_config();
        let dataset = generate(6, 3, &cfg).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_dataset(dir_a.path(), &dataset).unwrap();
        write_dataset(dir_b.path(), &dataset).unwrap();
        for file in [MANIFEST_FILE, TRAIN_FILE, EVAL_FILE] {
            let a = fs::read(dir_a.path().join(file)).unwrap();
            let b = fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
        let back = read_dataset(dir_a.path()).unwrap();
        assert_eq!(back, dataset);
    }

    #[test]
    fn subsample_arithmetic_matches_the_stride_rule() {
        // 810 states at cap 82: stride 10, indices 0, 10, ..., 800, then the
        // final state appended.
        let indices = subsample_indices(810, 82);
        assert_eq!(indices.len(), 82);
        assert_eq!(indices[0], 0);
        assert_eq!(indices[80], 800);
        assert_eq!(*indices.last().unwrap(), 809);

        // Short sequences pass through unchanged.
        assert_eq!(subsample_indices(30, 82), (0..30).collect::<Vec<_>>());

        // The last state is always kept.
        for len in [83, 100, 164, 411, 810] {
            let idx = subsample_indices(len, 82);
            assert_eq!(*idx.last().unwrap(), len - 1, "len {len}");
            assert!(idx.len() <= 83, "len {len} gave {} states", idx.len());
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn subsample_preserves_first_and_last_states() {
        let cfg = desk_config();
        let dataset = generate(3, 11, &cfg).unwrap();
        let record = &dataset.train[0];
        let seq = DesignSequence::from_record(record).unwrap();
        let sub = subsample(&seq, 40);
        assert_eq!(sub.states.first(), seq.states.first());
        assert_eq!(sub.states.last(), seq.states.last());
        assert!(sub.states.len() <= 41);
        assert_eq!(sub.actions, seq.actions);
    }

    #[test]
    fn split_counts_match_the_published_ratio() {
        let records: Vec<EpisodeRecord> = (0..7296)
            .map(|i| EpisodeRecord {
                seed: i,
                constraints: EpisodeConstraints {
                    far_target: 1.0,
                    tpr_targets: [(RoomType::Office, 1.0)].into_iter().collect(),
                    seed: i,
                },
                partition: GridPartition::uniform(2, 2, 2, 6.0, 4.0),
                actions: vec![],
            })
            .collect();
        let (train, eval) = split(records, 6612.0 / 7296.0, 0).unwrap();
        assert_eq!((train.len(), eval.len()), (6612, 684));
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let records: Vec<EpisodeRecord> = (0..10)
            .map(|i| EpisodeRecord {
                seed: i,
                constraints: EpisodeConstraints {
                    far_target: 1.0,
                    tpr_targets: [(RoomType::Office, 1.0)].into_iter().collect(),
                    seed: i,
                },
                partition: GridPartition::uniform(2, 2, 2, 6.0, 4.0),
                actions: vec![],
            })
            .collect();
        let (train_a, eval_a) = split(records.clone(), 0.5, 9).unwrap();
        let (train_b, eval_b) = split(records.clone(), 0.5, 9).unwrap();
        assert_eq!((train_a.clone(), eval_a.clone()), (train_b, eval_b));
        assert_eq!((train_a.len(), eval_a.len()), (5, 5));

        let mut union: Vec<u64> = train_a.iter().chain(eval_a.iter()).map(|r| r.seed).collect();
        union.sort_unstable();
        assert_eq!(union, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn histogram_bucket_counts() {
        let empty = histogram(std::iter::empty(), 50.0);
        assert!(empty.counts.iter().all(|&c| c == 0));

        let single = histogram([300.0], 50.0);
        assert_eq!(single.counts.iter().sum::<usize>(), 1);
        assert_eq!(single.counts[6], 1);

        let many = histogram([10.0, 20.0, 120.0, 700.0], 50.0);
        assert_eq!(many.counts.iter().sum::<usize>(), 4);
    }
}
