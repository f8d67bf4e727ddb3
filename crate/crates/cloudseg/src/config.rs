//! Run configuration: a TOML file of flat sections (network, train, data,
//! ablation). Every key has a default matching the reference training
//! setup; unknown keys are rejected so a typo cannot silently fall back.

use crate::cloud::synth::SceneSpec;
use crate::cloud::{read_ascii_cloud, CloudError, PointCloud};
use crate::network::{GlobalMode, ModelOptions, NetworkConfig};
use crate::training::{LossMode, TrainConfig};
use crate::Scalar;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub levels: usize,
    pub k: usize,
    pub clusters: usize,
    pub channels: Vec<usize>,
    pub ratio: usize,
    pub classes: usize,
    pub input_xyz: bool,
    pub dropout: Scalar,
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            levels: 5,
            k: 16,
            clusters: 16,
            channels: vec![8, 32, 128, 256, 512],
            ratio: 4,
            classes: 13,
            input_xyz: false,
            dropout: 0.5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LossModeKey {
    Wce,
    Aggregation,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub points_per_crop: usize,
    pub learning_rate: Scalar,
    pub lr_decay: Scalar,
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub epsilon: Scalar,
    pub loss_mode: LossModeKey,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub stop_at_oa: Option<Scalar>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 100,
            batch_size: 6,
            points_per_crop: 40960,
            learning_rate: 0.01,
            lr_decay: 0.95,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss_mode: LossModeKey::Aggregation,
            seed: 1,
            checkpoint_every: 0,
            stop_at_oa: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    /// Cloud file for `source = "file"`.
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub points: usize,
    pub seed: u64,
    pub noise_sigma: Scalar,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            path: None,
            classes: 3,
            points: 16384,
            seed: 7,
            noise_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub preset: AblationPreset,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            preset: AblationPreset::A4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub ablation: AblationSection,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    pub fn from_str_named(text: &str, name: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: name.to_string(),
            reason: e.to_string(),
        })
    }

    /// Architecture config with the ablation preset's toggles applied.
    pub fn network_config(&self) -> NetworkConfig {
        let (options, _) = self.ablation.preset.apply();
        NetworkConfig {
            levels: self.network.levels,
            k: self.network.k,
            clusters: self.network.clusters,
            channels: self.network.channels.clone(),
            ratio: self.network.ratio,
            classes: self.network.classes,
            input_xyz: self.network.input_xyz,
            dropout: self.network.dropout,
            seed: self.network.seed,
            options,
        }
    }

    /// Training config; the preset's loss mode wins over the train
    /// section when the preset dictates one (C and E rows, A1).
    pub fn train_config(&self) -> TrainConfig {
        let (_, forced_mode) = self.ablation.preset.apply();
        let loss_mode = match forced_mode {
            Some(mode) => mode,
            None => match self.train.loss_mode {
                LossModeKey::Wce => LossMode::WceOnly,
                LossModeKey::Aggregation => LossMode::Aggregation,
            },
        };
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            points_per_crop: self.train.points_per_crop,
            learning_rate: self.train.learning_rate,
            lr_decay: self.train.lr_decay,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epsilon: self.train.epsilon,
            loss_mode,
            seed: self.train.seed,
            checkpoint_every: self.train.checkpoint_every,
            stop_at_oa: self.train.stop_at_oa,
        }
    }

    /// Load or synthesize the dataset this config points at.
    pub fn dataset(&self) -> Result<PointCloud, ConfigError> {
        match self.data.source {
            DataSource::File => {
                let path = self.data.path.as_ref().ok_or_else(|| {
                    ConfigError::Invalid("data.source = \"file\" requires data.path".into())
                })?;
                let mut cloud = read_ascii_cloud(path, true)?;
                if cloud.class_count > self.network.classes {
                    return Err(ConfigError::Invalid(format!(
                        "file holds {} classes but network.classes = {}",
                        cloud.class_count, self.network.classes
                    )));
                }
                cloud.class_count = self.network.classes;
                Ok(cloud)
            }
            DataSource::Synthetic => {
                let mut spec = SceneSpec::default_room(
                    self.data.classes,
                    self.data.points,
                    self.data.seed,
                );
                spec.noise_sigma = self.data.noise_sigma;
                Ok(crate::cloud::synth::generate_synthetic_scene(&spec)?)
            }
        }
    }
}

/// One row of the ablation grid. A presets toggle whole components,
/// B presets the encoding sources, C presets the weight/pooling mix,
/// D presets the global aggregation, E presets the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum AblationPreset {
    A1,
    A2,
    A3,
    A4,
    B1,
    B2,
    B3,
    B4,
    B5,
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    D1,
    D2,
    D3,
    D4,
    D5,
    E1,
    E2,
}

impl AblationPreset {
    pub const ALL: [AblationPreset; 22] = [
        AblationPreset::A1,
        AblationPreset::A2,
        AblationPreset::A3,
        AblationPreset::A4,
        AblationPreset::B1,
        AblationPreset::B2,
        AblationPreset::B3,
        AblationPreset::B4,
        AblationPreset::B5,
        AblationPreset::C1,
        AblationPreset::C2,
        AblationPreset::C3,
        AblationPreset::C4,
        AblationPreset::C5,
        AblationPreset::C6,
        AblationPreset::D1,
        AblationPreset::D2,
        AblationPreset::D3,
        AblationPreset::D4,
        AblationPreset::D5,
        AblationPreset::E1,
        AblationPreset::E2,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            AblationPreset::A1 => "A1",
            AblationPreset::A2 => "A2",
            AblationPreset::A3 => "A3",
            AblationPreset::A4 => "A4",
            AblationPreset::B1 => "B1",
            AblationPreset::B2 => "B2",
            AblationPreset::B3 => "B3",
            AblationPreset::B4 => "B4",
            AblationPreset::B5 => "B5",
            AblationPreset::C1 => "C1",
            AblationPreset::C2 => "C2",
            AblationPreset::C3 => "C3",
            AblationPreset::C4 => "C4",
            AblationPreset::C5 => "C5",
            AblationPreset::C6 => "C6",
            AblationPreset::D1 => "D1",
            AblationPreset::D2 => "D2",
            AblationPreset::D3 => "D3",
            AblationPreset::D4 => "D4",
            AblationPreset::D5 => "D5",
            AblationPreset::E1 => "E1",
            AblationPreset::E2 => "E2",
        }
    }

    pub fn parse(text: &str) -> Result<AblationPreset, ConfigError> {
        Self::ALL
            .iter()
            .find(|p| p.id().eq_ignore_ascii_case(text))
            .copied()
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|p| p.id()).collect();
                ConfigError::Invalid(format!(
                    "unknown preset {text:?}; valid ids: {}",
                    valid.join(", ")
                ))
            })
    }

    /// The structural toggles this row implies, plus a forced loss mode
    /// where the row dictates one (None defers to the train section).
    pub fn apply(&self) -> (ModelOptions, Option<LossMode>) {
        let mut options = ModelOptions::default();
        let mut forced = None;
        match self {
            // Framework rows.
            AblationPreset::A1 => {
                // Without the adaptive unit there are no adaptive weights,
                // so the constraint term cannot exist.
                options.mean_pool_unit = true;
                options.adaptive = false;
                forced = Some(LossMode::WceOnly);
            }
            AblationPreset::A2 => options.replace_encoding = true,
            AblationPreset::A3 => options.global_mode = GlobalMode::None,
            AblationPreset::A4 => {}
            // Encoding-source rows.
            AblationPreset::B1 => {
                options.encode_spatial = false;
                options.encode_color = false;
            }
            AblationPreset::B2 => options.encode_color = false,
            AblationPreset::B3 => options.encode_spatial = false,
            AblationPreset::B4 => {
                options.encode_semantic = false;
                options.raw_semantic_concat = true;
            }
            AblationPreset::B5 => {}
            // Weight/pooling rows are compared without the constraint term.
            AblationPreset::C1 => {
                options.adaptive = false;
                options.pool_sum = false;
                forced = Some(LossMode::WceOnly);
            }
            AblationPreset::C2 => {
                options.adaptive = false;
                options.pool_max = false;
                forced = Some(LossMode::WceOnly);
            }
            AblationPreset::C3 => {
                options.adaptive = false;
                forced = Some(LossMode::WceOnly);
            }
            AblationPreset::C4 => {
                options.pool_sum = false;
                forced = Some(LossMode::WceOnly);
            }
            AblationPreset::C5 => {
                options.pool_max = false;
                forced = Some(LossMode::WceOnly);
            }
            AblationPreset::C6 => forced = Some(LossMode::WceOnly),
            // Global-aggregation rows.
            AblationPreset::D1 => options.global_mode = GlobalMode::None,
            AblationPreset::D2 => options.global_mode = GlobalMode::VladLast,
            AblationPreset::D3 => options.global_mode = GlobalMode::MaxPool,
            AblationPreset::D4 => options.global_mode = GlobalMode::MeanPool,
            AblationPreset::D5 => {}
            // Loss rows.
            AblationPreset::E1 => forced = Some(LossMode::WceOnly),
            AblationPreset::E2 => forced = Some(LossMode::Aggregation),
        }
        (options, forced)
    }
}
