use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::data::AugmentConfig;
use crate::quant::{ExemptLayers, QuantMode, TernaryPolicy};
use crate::snn::{BuildOptions, InputShape, LifParams, NetworkSpec, CIFARNET};
use crate::training::{MatchTarget, Seeds, TnaLossConfig, TrainConfig, TrainMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    FashionMnist,
    Cifar10,
    Cifar100,
    /// Generated spike trains; needs no files.
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::FashionMnist => "fashion_mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dataset: DatasetKind,
    /// Directory holding the dataset files; the command line and `DATA_ROOT`
    /// take precedence.
    pub root: Option<String>,
    pub validation_fraction: f64,
    pub augment: bool,
    pub synthetic_classes: usize,
    pub synthetic_size: usize,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Cifar10,
            root: None,
            validation_fraction: 0.1,
            augment: true,
            synthetic_classes: 2,
            synthetic_size: 8,
            synthetic_train: 512,
            synthetic_test: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: String,
    pub timesteps: usize,
    pub dropout_p: f64,
    pub lif_alpha: f64,
    pub lif_theta: f64,
    pub surrogate_width: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let lif = LifParams::default();
        Self {
            architecture: CIFARNET.to_string(),
            timesteps: 5,
            dropout_p: 0.2,
            lif_alpha: lif.alpha,
            lif_theta: lif.theta,
            surrogate_width: lif.surrogate_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub initial_lr: f64,
    pub gamma: f64,
    pub alpha_match: f64,
    pub mode: TrainMode,
    pub n_networks: usize,
    pub match_target: MatchTarget,
    /// Frozen teacher checkpoint for `kd` and `kd_ce`.
    pub teacher: Option<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let loss = TnaLossConfig::default();
        Self {
            epochs: 250,
            batch_size: 256,
            eval_batch_size: 500,
            initial_lr: 0.01,
            gamma: 0.928,
            alpha_match: loss.alpha_match,
            mode: loss.mode,
            n_networks: loss.n_networks,
            match_target: loss.match_target,
            teacher: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TernarySection {
    pub enabled: bool,
    pub delta: f64,
    pub start_epoch: usize,
    pub mode: QuantMode,
    /// Weight-layer indices kept at full precision; first and last if unset.
    pub exempt_layers: Option<Vec<usize>>,
}

impl Default for TernarySection {
    fn default() -> Self {
        let p = TernaryPolicy::default();
        Self {
            enabled: false,
            delta: p.delta,
            start_epoch: p.start_epoch,
            mode: p.mode,
            exempt_layers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub base: u64,
    pub twin: u64,
    pub data: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        let s = Seeds::default();
        Self {
            base: s.base,
            twin: s.twin,
            data: s.data,
        }
    }
}

/// Full experiment description. Every field has a default, so an empty file
/// is a valid configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub ternary: TernarySection,
    pub seeds: SeedSection,
}

fn field(field: &str, msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config {
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // a bare word that is not valid TOML is taken as a string
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), ExperimentError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| field(assignment, "override must look like section.key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = path.split_last().expect("split yields one item");
    let mut table = root;
    for s in sections {
        table = table
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| field(key.trim(), format!("`{s}` is not a section")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text, applies `section.key=value` overrides (later ones
    /// win) and validates the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| field("<file>", e.message()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            field("<file>", e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let d = &self.data;
        if !(0.0..1.0).contains(&d.validation_fraction) {
            return Err(field("data.validation_fraction", "must lie in [0, 1)"));
        }
        if d.dataset == DatasetKind::Synthetic {
            if d.synthetic_classes < 2 {
                return Err(field("data.synthetic_classes", "needs at least 2 classes"));
            }
            if d.synthetic_size == 0 || d.synthetic_train == 0 || d.synthetic_test == 0 {
                return Err(field("data.synthetic_size", "synthetic sizes must be positive"));
            }
        }
        let m = &self.model;
        if m.timesteps == 0 {
            return Err(field("model.timesteps", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&m.dropout_p) {
            return Err(field("model.dropout_p", "must lie in [0, 1)"));
        }
        self.lif()
            .validate()
            .map_err(|e| field("model.lif_alpha/lif_theta/surrogate_width", e.to_string()))?;
        self.network_spec().map_err(|e| field("model.architecture", e.to_string()))?;

        let t = &self.train;
        if t.epochs == 0 {
            return Err(field("train.epochs", "must be at least 1"));
        }
        if t.batch_size == 0 {
            return Err(field("train.batch_size", "must be at least 1"));
        }
        if t.eval_batch_size == 0 {
            return Err(field("train.eval_batch_size", "must be at least 1"));
        }
        if !(t.initial_lr > 0.0 && t.initial_lr.is_finite()) {
            return Err(field("train.initial_lr", "must be positive"));
        }
        if !(t.gamma > 0.0 && t.gamma <= 1.0) {
            return Err(field("train.gamma", "must lie in (0, 1]"));
        }
        if !(t.alpha_match >= 0.0 && t.alpha_match.is_finite()) {
            return Err(field("train.alpha_match", "must be a finite non-negative number"));
        }
        match t.mode {
            TrainMode::Baseline if t.n_networks != 1 => {
                return Err(field("train.n_networks", format!("mode=baseline requires 1, got {}", t.n_networks)))
            }
            TrainMode::Tna if t.n_networks < 2 => {
                return Err(field("train.n_networks", format!("mode=tna requires at least 2, got {}", t.n_networks)))
            }
            TrainMode::Kd | TrainMode::KdCe if t.n_networks != 2 => {
                return Err(field(
                    "train.n_networks",
                    format!("mode={} requires 2 (student and teacher), got {}", t.mode.as_str(), t.n_networks),
                ))
            }
            _ => {}
        }
        if t.mode.uses_teacher() && t.teacher.is_none() {
            return Err(field("train.teacher", format!("mode={} needs a teacher checkpoint", t.mode.as_str())));
        }
        if !t.mode.uses_teacher() && t.teacher.is_some() {
            return Err(field("train.teacher", format!("mode={} does not use a teacher", t.mode.as_str())));
        }
        if self.ternary.enabled {
            self.ternary_policy()
                .expect("enabled")
                .validate()
                .map_err(|e| field("ternary.delta", e.to_string()))?;
        }
        Ok(())
    }

    pub fn input_shape(&self) -> InputShape {
        match self.data.dataset {
            DatasetKind::FashionMnist => InputShape::new(1, 28, 28),
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => InputShape::new(3, 32, 32),
            DatasetKind::Synthetic => InputShape::new(1, self.data.synthetic_size, self.data.synthetic_size),
        }
    }

    pub fn classes(&self) -> usize {
        match self.data.dataset {
            DatasetKind::FashionMnist | DatasetKind::Cifar10 => 10,
            DatasetKind::Cifar100 => 100,
            DatasetKind::Synthetic => self.data.synthetic_classes,
        }
    }

    pub fn lif(&self) -> LifParams {
        LifParams {
            alpha: self.model.lif_alpha,
            theta: self.model.lif_theta,
            surrogate_width: self.model.surrogate_width,
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, crate::snn::ModelError> {
        NetworkSpec::from_architecture(
            &self.model.architecture,
            self.input_shape(),
            self.classes(),
            self.model.timesteps,
            &BuildOptions {
                lif: self.lif(),
                dropout_p: self.model.dropout_p,
            },
        )
    }

    pub fn ternary_policy(&self) -> Option<TernaryPolicy> {
        let t = &self.ternary;
        t.enabled.then(|| TernaryPolicy {
            delta: t.delta,
            start_epoch: t.start_epoch,
            exempt_layers: t
                .exempt_layers
                .clone()
                .map_or(ExemptLayers::FirstAndLast, ExemptLayers::Indices),
            mode: t.mode,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            initial_lr: t.initial_lr,
            gamma: t.gamma,
            loss: TnaLossConfig {
                alpha_match: t.alpha_match,
                mode: t.mode,
                n_networks: t.n_networks,
                match_target: t.match_target,
            },
            seeds: Seeds {
                base: self.seeds.base,
                twin: self.seeds.twin,
                data: self.seeds.data,
            },
            ternary: self.ternary_policy(),
            augment: (self.data.augment && self.data.dataset != DatasetKind::Synthetic).then(AugmentConfig::default),
            eval_batch_size: t.eval_batch_size,
        }
    }

    /// Fully resolved configuration as TOML; enough to reproduce the run.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`snapshot`](Self::snapshot).
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.snapshot().as_bytes()).into()
    }
}
