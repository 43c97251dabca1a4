//! Run configuration: one JSON file governs scale. The `desk` preset runs
//! every experiment on a laptop-class CPU; `paper` lifts the dimensions to
//! the full-scale setting (4 layers, 8 heads, 2048-wide latents, 5
//! couplings, 82-step subsampling).

use serde::{Deserialize, Serialize};
use std::path::Path;

use massing_core::agent::SampleConfig;
use massing_core::dataset::GenerateConfig;
use massing_models::flow::FlowTrainConfig;
use massing_models::sequence::TrainConfig;
use massing_neural::AttentionConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HMode {
    /// Corruption horizons as fractions of each expert trace.
    Percent,
    /// Absolute step counts.
    Absolute,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub n_sequences: usize,
    pub min_raw_len: usize,
    pub max_subsampled_len: usize,
    pub train_fraction: f64,
    pub far_range: [f64; 2],
    pub office_range: [f64; 2],
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_sequences: 500,
            min_raw_len: 100,
            max_subsampled_len: 40,
            train_fraction: 6612.0 / 7296.0,
            far_range: [1.0, 5.0],
            office_range: [0.6, 0.85],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub momentum: f64,
    pub kl_weight: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 8,
            model_dim: 128,
            lr: 0.2,
            lr_decay: 0.99,
            epochs: 60,
            batch_size: 8,
            grad_clip: 1.0,
            momentum: 0.9,
            kl_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSection {
    pub couplings: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            couplings: 5,
            hidden_dim: 128,
            lr: 5e-3,
            epochs: 80,
            batch_size: 16,
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PreferenceSection {
    pub h_mode: HMode,
    pub h_values: Vec<f64>,
    /// Corrupted counterparts drawn per evaluation sequence and level.
    pub trials: usize,
    /// Seeded reruns aggregated into the reported mean and deviation.
    pub seeds: usize,
}

impl Default for PreferenceSection {
    fn default() -> Self {
        Self {
            h_mode: HMode::Percent,
            h_values: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            trials: 4,
            seeds: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutSection {
    pub prefix_len: usize,
    pub horizon: usize,
    pub count: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self {
            prefix_len: 5,
            horizon: 30,
            count: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSection {
    pub layers: Vec<usize>,
    pub heads: Vec<usize>,
    pub epochs: usize,
    pub model_dim: usize,
    pub max_sequences: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            layers: vec![4, 8],
            heads: vec![2, 4, 8],
            epochs: 30,
            model_dim: 64,
            max_sequences: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub version: u32,
    pub grid: [usize; 3],
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub flow: FlowSection,
    pub preference: PreferenceSection,
    pub rollout: RolloutSection,
    pub ablation: AblationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            grid: [10, 10, 10],
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            flow: FlowSection::default(),
            preference: PreferenceSection::default(),
            rollout: RolloutSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self::default()
    }

    pub fn paper() -> Self {
        Self {
            dataset: DatasetSection {
                n_sequences: 10_000,
                max_subsampled_len: 82,
                ..DatasetSection::default()
            },
            model: ModelSection {
                model_dim: 2048,
                ..ModelSection::default()
            },
            flow: FlowSection {
                hidden_dim: 2048,
                ..FlowSection::default()
            },
            preference: PreferenceSection {
                h_mode: HMode::Absolute,
                h_values: vec![0.0, 100.0, 200.0, 300.0, 400.0],
                ..PreferenceSection::default()
            },
            rollout: RolloutSection {
                prefix_len: 5,
                horizon: 50,
                count: 50,
            },
            ..Self::default()
        }
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Paper => Self::paper(),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        if config.version != CONFIG_VERSION {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unsupported config version {}", config.version),
            ));
        }
        Ok(config)
    }

    /// Sequence-model geometry implied by this configuration; the model must
    /// admit one state more than the subsampling cap.
    pub fn attention_config(&self) -> AttentionConfig {
        AttentionConfig {
            layers: self.model.layers,
            heads: self.model.heads,
            model_dim: self.model.model_dim,
            input_dim: self.grid.iter().product(),
            max_len: self.dataset.max_subsampled_len + 1,
        }
    }

    pub fn generate_config(&self) -> GenerateConfig {
        GenerateConfig {
            sample: SampleConfig {
                dims: (self.grid[0], self.grid[1], self.grid[2]),
                far_range: (self.dataset.far_range[0], self.dataset.far_range[1]),
                office_range: (self.dataset.office_range[0], self.dataset.office_range[1]),
            },
            min_raw_len: self.dataset.min_raw_len,
            max_subsampled_len: self.dataset.max_subsampled_len,
            train_fraction: self.dataset.train_fraction,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.model.lr,
            epochs: self.model.epochs,
            batch_size: self.model.batch_size,
            kl_weight: self.model.kl_weight,
            grad_clip: self.model.grad_clip,
            momentum: self.model.momentum,
            lr_decay: self.model.lr_decay,
        }
    }

    pub fn flow_train_config(&self) -> FlowTrainConfig {
        FlowTrainConfig {
            lr: self.flow.lr,
            epochs: self.flow.epochs,
            batch_size: self.flow.batch_size,
            grad_clip: self.flow.grad_clip,
        }
    }
}
