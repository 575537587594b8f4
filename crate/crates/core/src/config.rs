//! Experiment configuration: a single JSON document with defaults,
//! strict unknown-key rejection, and field-level validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dp::{DpConfig, Strategy};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::partition::{PartitionMode, PartitionSpec};

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Seeded Gaussian blobs.
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        /// Defaults to the run seed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Headerless labeled CSV (label, then features).
    CsvLabeled { path: PathBuf },
    /// IDX binary pair (big-endian dims, bytes scaled to [0, 1]).
    IdxPair { images: PathBuf, labels: PathBuf },
}

fn default_synthetic() -> DatasetSource {
    DatasetSource::Synthetic {
        classes: 3,
        per_class: 200,
        dim: 32,
        separation: 10.0,
        seed: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSection {
    #[serde(default = "defaults::strategy")]
    pub strategy: Strategy,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    /// Defaults to 1 / batch_size when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default = "defaults::kl_bound")]
    pub kl_bound: f64,
    #[serde(default)]
    pub selection_threshold: f64,
    #[serde(default = "defaults::clip_bound")]
    pub clip_bound: f64,
    /// Defaults to min(1e-6, kl_bound / 2) so the floor always sits below
    /// the cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_floor: Option<f64>,
    /// Defaults to ln(10)/rounds so the time-varying baseline ends at a
    /// tenth of its initial scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(default = "defaults::partition_mode")]
    pub mode: PartitionMode,
    #[serde(default)]
    pub private_label: usize,
    #[serde(default)]
    pub hbc_client: usize,
    #[serde(default = "defaults::dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default = "defaults::labels_per_client")]
    pub labels_per_client: usize,
}

mod defaults {
    use super::*;

    pub fn strategy() -> Strategy {
        Strategy::None
    }
    pub fn epsilon() -> f64 {
        0.2
    }
    pub fn kl_bound() -> f64 {
        1e-8
    }
    pub fn clip_bound() -> f64 {
        0.1
    }
    pub fn partition_mode() -> PartitionMode {
        PartitionMode::General
    }
    pub fn dirichlet_alpha() -> f64 {
        0.01
    }
    pub fn labels_per_client() -> usize {
        4
    }
    pub fn num_clients() -> usize {
        20
    }
    pub fn activation_rate() -> f64 {
        0.5
    }
    pub fn rounds() -> u64 {
        50
    }
    pub fn local_epochs() -> u32 {
        2
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn model() -> ModelSpec {
        ModelSpec::new(vec![32, 64, 32, 3]).expect("default model spec")
    }
    pub fn dp() -> DpSection {
        DpSection {
            strategy: strategy(),
            epsilon: epsilon(),
            delta: None,
            kl_bound: kl_bound(),
            selection_threshold: 0.0,
            clip_bound: clip_bound(),
            p_floor: None,
            decay_rate: None,
        }
    }
    pub fn partition() -> PartitionSection {
        PartitionSection {
            mode: partition_mode(),
            private_label: 0,
            hbc_client: 0,
            dirichlet_alpha: dirichlet_alpha(),
            labels_per_client: labels_per_client(),
        }
    }
    pub fn output_path() -> PathBuf {
        PathBuf::from("out")
    }
}

/// Full description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::num_clients")]
    pub num_clients: usize,
    #[serde(default = "defaults::activation_rate")]
    pub activation_rate: f64,
    #[serde(default = "defaults::rounds")]
    pub rounds: u64,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: u32,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::model")]
    pub model: ModelSpec,
    #[serde(default = "defaults::dp")]
    pub dp: DpSection,
    #[serde(default = "defaults::partition")]
    pub partition: PartitionSection,
    #[serde(default = "default_synthetic")]
    pub dataset: DatasetSource,
    #[serde(default = "defaults::output_path")]
    pub output_path: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

impl ExperimentConfig {
    /// Resolved failure probability: explicit, or 1 / batch_size.
    pub fn delta(&self) -> f64 {
        self.dp.delta.unwrap_or(1.0 / self.batch_size as f64)
    }

    /// Resolved decay rate for the time-varying baseline.
    pub fn decay_rate(&self) -> f64 {
        self.dp
            .decay_rate
            .unwrap_or_else(|| (10.0f64).ln() / (self.rounds.max(1)) as f64)
    }

    /// Resolved estimate floor: explicit, or min(1e-6, kl_bound / 2).
    pub fn p_floor(&self) -> f64 {
        self.dp
            .p_floor
            .unwrap_or_else(|| (self.dp.kl_bound / 2.0).min(1e-6))
    }

    /// The per-client privacy configuration implied by this experiment.
    pub fn dp_config(&self) -> DpConfig {
        DpConfig {
            epsilon: self.dp.epsilon,
            delta: self.delta(),
            kl_bound: self.dp.kl_bound,
            selection_threshold: self.dp.selection_threshold,
            clip_bound: self.dp.clip_bound,
            p_floor: self.p_floor(),
            strategy: self.dp.strategy,
            decay_rate: self.decay_rate(),
        }
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            mode: self.partition.mode,
            num_clients: self.num_clients,
            private_label: self.partition.private_label,
            hbc_client: self.partition.hbc_client,
            dirichlet_alpha: self.partition.dirichlet_alpha,
            labels_per_client: self.partition.labels_per_client,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &str, message: String) -> Error {
            Error::ValidationError {
                field: field.into(),
                message,
            }
        }

        if self.num_clients < 1 {
            return Err(bad("num_clients", "need at least 1 client".into()));
        }
        if !(self.activation_rate > 0.0 && self.activation_rate <= 1.0) {
            return Err(bad(
                "activation_rate",
                format!("must lie in (0, 1], got {}", self.activation_rate),
            ));
        }
        if self.local_epochs == 0 {
            return Err(bad("local_epochs", "must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1".into()));
        }
        self.model.validate()?;
        let delta = self.delta();
        if !(delta > 0.0 && delta < 1.0) {
            return Err(bad("dp.delta", format!("must lie in (0, 1), got {delta}")));
        }
        self.dp_config().validate()?;
        if let DatasetSource::Synthetic {
            classes,
            per_class,
            dim,
            separation,
            ..
        } = &self.dataset
        {
            if *classes < 2 {
                return Err(bad(
                    "dataset.classes",
                    format!("need at least 2, got {classes}"),
                ));
            }
            if *per_class == 0 || *dim == 0 {
                return Err(bad("dataset", "per_class and dim must be positive".into()));
            }
            if !separation.is_finite() || *separation < 0.0 {
                return Err(bad(
                    "dataset.separation",
                    format!("must be non-negative, got {separation}"),
                ));
            }
            if self.model.num_classes() != *classes {
                return Err(bad(
                    "model.layer_sizes",
                    format!(
                        "model emits {} classes but the dataset has {classes}",
                        self.model.num_classes()
                    ),
                ));
            }
            if self.model.input_dim() != *dim {
                return Err(bad(
                    "model.layer_sizes",
                    format!(
                        "model expects input dim {} but the dataset has {dim}",
                        self.model.input_dim()
                    ),
                ));
            }
        }
        // Partition bounds that do not need the dataset.
        if self.partition.hbc_client >= self.num_clients {
            return Err(bad(
                "partition.hbc_client",
                format!(
                    "client {} out of range for {} clients",
                    self.partition.hbc_client, self.num_clients
                ),
            ));
        }
        Ok(())
    }
}

/// Load, default, and validate a config file. Referenced dataset files must
/// exist at load time; unknown keys are rejected.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ParseError(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::ParseError(e.to_string()))?;
    cfg.validate()?;
    match &cfg.dataset {
        DatasetSource::CsvLabeled { path } if !path.exists() => {
            return Err(Error::ValidationError {
                field: "dataset.path".into(),
                message: format!("{} does not exist", path.display()),
            });
        }
        DatasetSource::IdxPair { images, labels } => {
            for (field, p) in [("dataset.images", images), ("dataset.labels", labels)] {
                if !p.exists() {
                    return Err(Error::ValidationError {
                        field: field.into(),
                        message: format!("{} does not exist", p.display()),
                    });
                }
            }
        }
        _ => {}
    }
    Ok(cfg)
}
