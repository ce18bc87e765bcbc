//! Declarative experiment configuration.
//!
//! One YAML document describes one experiment. Every section is optional and
//! falls back to the protocol defaults (30 sellers, 200 rounds, 30% sampling,
//! two local epochs, batch 64, learning rate 0.001, 2% buyer root). Unknown
//! keys are rejected at every nesting level.
//!
//! Sections that select an implementation (`dataset`, `model`, `buyer_bias`,
//! `aggregator`, `attack`) are mappings with a `kind` field plus the
//! parameters of every variant; parameters of inactive variants are ignored.
//!
//! All randomness in a run is derived from `seed` through [`derive_seed`].

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_yaml::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable that overrides the default output directory of the CLI.
pub const OUTPUT_DIR_ENV: &str = "GRADMARKET_OUT_DIR";

/// Sections whose scalar overrides (`--set aggregator=fltrust`) target `kind`.
const KINDED_SECTIONS: &[&str] = &["dataset", "model", "buyer_bias", "aggregator", "attack"];

/// Floor/ceil guard against representation error in `fraction * count`.
const COUNT_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to parse config: {0}")]
    Parse(String),

    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("invalid override `{0}`: expected key=value")]
    Override(String),

    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub kind: DatasetKind,
    /// Number of classes K (synthetic).
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    /// Feature dimension d (synthetic).
    #[serde(default = "defaults::dim")]
    pub dim: usize,
    /// Total generated samples before the train/test split (synthetic).
    #[serde(default = "defaults::samples")]
    pub samples: usize,
    /// Norm of each class mean (synthetic).
    #[serde(default = "defaults::separation")]
    pub separation: f64,
    /// Isotropic within-class standard deviation (synthetic).
    #[serde(default = "defaults::noise_std")]
    pub noise_std: f64,
    /// Fraction of generated samples held out as the clean test set (synthetic).
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            classes: defaults::classes(),
            dim: defaults::dim(),
            samples: defaults::samples(),
            separation: defaults::separation(),
            noise_std: defaults::noise_std(),
            test_fraction: defaults::test_fraction(),
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuyerBiasKind {
    #[default]
    Unbiased,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerBiasConfig {
    #[serde(default)]
    pub kind: BuyerBiasKind,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
}

impl Default for BuyerBiasConfig {
    fn default() -> Self {
        Self {
            kind: BuyerBiasKind::Unbiased,
            alpha: defaults::alpha(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Fedavg,
    Fltrust,
    #[default]
    Martfl,
    Skymask,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fedavg => "fedavg",
            Self::Fltrust => "fltrust",
            Self::Martfl => "martfl",
            Self::Skymask => "skymask",
        }
    }
}

/// How the MartFL reference vector is re-anchored after each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceUpdate {
    /// The aggregated delta of the round.
    #[default]
    Aggregate,
    /// The selected raw delta most cosine-similar to the aggregate.
    Medoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    #[serde(default)]
    pub kind: AggregatorKind,
    #[serde(default)]
    pub reference: ReferenceUpdate,
    #[serde(default = "defaults::mask_steps")]
    pub mask_steps: usize,
    #[serde(default = "defaults::mask_lr")]
    pub mask_lr: f64,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            kind: AggregatorKind::default(),
            reference: ReferenceUpdate::default(),
            mask_steps: defaults::mask_steps(),
            mask_lr: defaults::mask_lr(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    Backdoor,
    LabelFlip,
    SybilBackdoor,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Backdoor => "backdoor",
            Self::LabelFlip => "label_flip",
            Self::SybilBackdoor => "sybil_backdoor",
        }
    }

    pub fn uses_trigger(self) -> bool {
        matches!(self, Self::Backdoor | Self::SybilBackdoor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    #[default]
    BottomRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    /// Side length of the square patch on image-like data.
    #[serde(default = "defaults::patch_side")]
    pub patch_side: usize,
    #[serde(default)]
    pub location: Corner,
    /// Number of trailing features overwritten on flat (synthetic) data.
    #[serde(default = "defaults::offset_dims")]
    pub offset_dims: usize,
    #[serde(default = "defaults::trigger_value")]
    pub value: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            patch_side: defaults::patch_side(),
            location: Corner::default(),
            offset_dims: defaults::offset_dims(),
            value: defaults::trigger_value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub kind: AttackKind,
    #[serde(default = "defaults::adversary_fraction")]
    pub adversary_fraction: f64,
    #[serde(default = "defaults::poison_rate")]
    pub poison_rate: f64,
    #[serde(default = "defaults::flip_fraction")]
    pub flip_fraction: f64,
    #[serde(default)]
    pub target_label: usize,
    #[serde(default = "defaults::mimicry_lambda")]
    pub mimicry_lambda: f64,
    #[serde(default)]
    pub trigger: TriggerConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            adversary_fraction: defaults::adversary_fraction(),
            poison_rate: defaults::poison_rate(),
            flip_fraction: defaults::flip_fraction(),
            target_label: 0,
            mimicry_lambda: defaults::mimicry_lambda(),
            trigger: TriggerConfig::default(),
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketplaceConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Filled in by [`load_config`]: `mlp` for synthetic data, `logreg` for images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default = "defaults::num_sellers")]
    pub num_sellers: usize,
    #[serde(default = "defaults::num_rounds")]
    pub num_rounds: usize,
    #[serde(default = "defaults::sample_fraction")]
    pub sample_fraction: f64,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::local_lr")]
    pub local_lr: f64,
    #[serde(default = "defaults::buyer_root_fraction")]
    pub buyer_root_fraction: f64,
    #[serde(default)]
    pub buyer_bias: BuyerBiasConfig,
    #[serde(default = "defaults::seller_noise")]
    pub seller_noise: f64,
    #[serde(default)]
    pub aggregator: AggregatorConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "defaults::milestones")]
    pub milestones: Vec<f64>,
    #[serde(default = "defaults::repeats")]
    pub repeats: usize,
}

impl Default for MarketplaceConfig {
    fn default() -> Self {
        let mut config: MarketplaceConfig =
            serde_yaml::from_str("{}").expect("empty mapping deserializes");
        config.normalize();
        config
    }
}

mod defaults {
    pub fn classes() -> usize {
        3
    }
    pub fn dim() -> usize {
        8
    }
    pub fn samples() -> usize {
        6000
    }
    pub fn separation() -> f64 {
        3.5
    }
    pub fn noise_std() -> f64 {
        1.0
    }
    pub fn test_fraction() -> f64 {
        0.2
    }
    pub fn hidden() -> usize {
        32
    }
    pub fn alpha() -> f64 {
        0.3
    }
    pub fn mask_steps() -> usize {
        20
    }
    pub fn mask_lr() -> f64 {
        0.1
    }
    pub fn patch_side() -> usize {
        10
    }
    pub fn offset_dims() -> usize {
        8
    }
    pub fn trigger_value() -> f64 {
        1.0
    }
    pub fn adversary_fraction() -> f64 {
        0.3
    }
    pub fn poison_rate() -> f64 {
        0.5
    }
    pub fn flip_fraction() -> f64 {
        0.5
    }
    pub fn mimicry_lambda() -> f64 {
        0.5
    }
    pub fn num_sellers() -> usize {
        30
    }
    pub fn num_rounds() -> usize {
        200
    }
    pub fn sample_fraction() -> f64 {
        0.3
    }
    pub fn local_epochs() -> usize {
        2
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn local_lr() -> f64 {
        0.001
    }
    pub fn buyer_root_fraction() -> f64 {
        0.02
    }
    pub fn seller_noise() -> f64 {
        0.3
    }
    pub fn milestones() -> Vec<f64> {
        vec![0.70, 0.80, 0.85]
    }
    pub fn repeats() -> usize {
        10
    }
}

impl MarketplaceConfig {
    /// Sellers sampled per round: `ceil(p * N)`.
    pub fn sampled_count(&self) -> usize {
        ((self.sample_fraction * self.num_sellers as f64) - COUNT_EPS).ceil().max(0.0) as usize
    }

    /// Malicious sellers: `floor(adversary_fraction * N)`, zero when no attack is configured.
    pub fn malicious_count(&self) -> usize {
        if self.attack.kind == AttackKind::None {
            return 0;
        }
        ((self.attack.adversary_fraction * self.num_sellers as f64) + COUNT_EPS).floor() as usize
    }

    /// The resolved model architecture.
    pub fn model(&self) -> ModelConfig {
        self.model.clone().unwrap_or_else(|| default_model(self.dataset.kind))
    }

    /// Seed of repeat `r`.
    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        derive_seed(self.seed, "repeat", repeat as u64)
    }

    /// SHA-256 over the canonical JSON form of the normalized config.
    pub fn config_hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.normalize();
        let canonical = serde_json::to_vec(&normalized).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    fn normalize(&mut self) {
        if self.model.is_none() {
            self.model = Some(default_model(self.dataset.kind));
        }
    }

    /// Check every field constraint, naming the first violated field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ds = &self.dataset;
        match ds.kind {
            DatasetKind::Synthetic => {
                if ds.classes < 2 {
                    return Err(invalid("dataset.classes", "must be at least 2"));
                }
                if ds.dim < ds.classes {
                    return Err(invalid("dataset.dim", "must be at least dataset.classes"));
                }
                if ds.samples < 10 * ds.classes {
                    return Err(invalid("dataset.samples", "must be at least 10 * classes"));
                }
                check_positive("dataset.separation", ds.separation)?;
                check_positive("dataset.noise_std", ds.noise_std)?;
                check_open_unit("dataset.test_fraction", ds.test_fraction)?;
                if self.attack.kind.uses_trigger() && self.attack.trigger.offset_dims > ds.dim {
                    return Err(invalid("attack.trigger.offset_dims", "exceeds dataset.dim"));
                }
                if self.attack.kind != AttackKind::None && self.attack.target_label >= ds.classes {
                    return Err(invalid("attack.target_label", "must be below dataset.classes"));
                }
            }
            DatasetKind::Idx => {
                for (name, path) in [
                    ("dataset.train_images", &ds.train_images),
                    ("dataset.train_labels", &ds.train_labels),
                    ("dataset.test_images", &ds.test_images),
                    ("dataset.test_labels", &ds.test_labels),
                ] {
                    if path.is_none() {
                        return Err(invalid(name, "required for idx datasets"));
                    }
                }
            }
        }

        if let Some(model) = &self.model {
            if model.kind == ModelKind::Mlp && model.hidden == 0 {
                return Err(invalid("model.hidden", "must be positive"));
            }
        }
        if self.num_sellers == 0 {
            return Err(invalid("num_sellers", "must be positive"));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(invalid("sample_fraction", "must lie in (0, 1]"));
        }
        if self.sampled_count() < 1 {
            return Err(invalid("sample_fraction", "ceil(p * N) must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(invalid("local_epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        check_positive("local_lr", self.local_lr)?;
        check_open_unit("buyer_root_fraction", self.buyer_root_fraction)?;
        if self.buyer_bias.kind == BuyerBiasKind::Dirichlet {
            check_positive("buyer_bias.alpha", self.buyer_bias.alpha)?;
        }
        if !(self.seller_noise.is_finite() && self.seller_noise >= 0.0) {
            return Err(invalid("seller_noise", "must be a nonnegative finite number"));
        }
        if self.aggregator.kind == AggregatorKind::Skymask {
            check_positive("aggregator.mask_lr", self.aggregator.mask_lr)?;
        }

        let attack = &self.attack;
        if !(attack.adversary_fraction >= 0.0 && attack.adversary_fraction < 1.0) {
            return Err(invalid("attack.adversary_fraction", "must lie in [0, 1)"));
        }
        if self.malicious_count() >= self.num_sellers {
            return Err(invalid(
                "attack.adversary_fraction",
                "malicious seller count must stay below num_sellers",
            ));
        }
        check_unit("attack.poison_rate", attack.poison_rate)?;
        check_unit("attack.flip_fraction", attack.flip_fraction)?;
        check_unit("attack.mimicry_lambda", attack.mimicry_lambda)?;
        if !attack.trigger.value.is_finite() {
            return Err(invalid("attack.trigger.value", "must be finite"));
        }

        for (i, m) in self.milestones.iter().enumerate() {
            if !(*m > 0.0 && *m < 1.0) {
                return Err(invalid("milestones", format!("entry {i} must lie in (0, 1)")));
            }
            if i > 0 && *m <= self.milestones[i - 1] {
                return Err(invalid("milestones", "must be strictly increasing"));
            }
        }
        if self.repeats == 0 {
            return Err(invalid("repeats", "must be positive"));
        }
        Ok(())
    }
}

fn default_model(kind: DatasetKind) -> ModelConfig {
    match kind {
        DatasetKind::Synthetic => ModelConfig {
            kind: ModelKind::Mlp,
            hidden: defaults::hidden(),
        },
        DatasetKind::Idx => ModelConfig {
            kind: ModelKind::Logreg,
            hidden: defaults::hidden(),
        },
    }
}

fn check_positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, "must be a positive finite number"))
    }
}

fn check_unit(field: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, "must lie in [0, 1]"))
    }
}

fn check_open_unit(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(field, "must lie in (0, 1)"))
    }
}

/// Parse, default, and validate a YAML config document.
pub fn load_config(text: &str) -> Result<MarketplaceConfig, ConfigError> {
    let value: Value = serde_yaml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config_from_value(value)
}

/// Load a config document with `key=value` overrides applied on top.
pub fn load_config_with_overrides(
    text: &str,
    overrides: &[String],
) -> Result<MarketplaceConfig, ConfigError> {
    let mut value: Value =
        serde_yaml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(item.clone()))?;
        set_path(&mut value, key.trim(), raw.trim())?;
    }
    config_from_value(value)
}

pub fn load_config_file(path: &std::path::Path) -> Result<MarketplaceConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    load_config(&text)
}

/// Rewrite `section: name` shorthand into `section: {kind: name}`.
fn expand_kinded(doc: &mut Value) {
    let Some(map) = doc.as_mapping_mut() else { return };
    for section in KINDED_SECTIONS {
        if let Some(v) = map.get_mut(*section) {
            if v.is_string() {
                let mut inner = serde_yaml::Mapping::new();
                inner.insert(Value::String("kind".into()), v.clone());
                *v = Value::Mapping(inner);
            }
        }
    }
}

fn config_from_value(value: Value) -> Result<MarketplaceConfig, ConfigError> {
    // An empty document parses as null.
    let mut value = if value.is_null() {
        Value::Mapping(Default::default())
    } else {
        value
    };
    expand_kinded(&mut value);
    let mut config: MarketplaceConfig =
        serde_yaml::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.normalize();
    config.validate()?;
    Ok(config)
}

/// Set a dotted `path` inside a YAML document to the YAML scalar `raw`.
///
/// Assigning a scalar to one of the kinded sections sets its `kind`.
pub fn set_path(doc: &mut Value, path: &str, raw: &str) -> Result<(), ConfigError> {
    let parsed: Value =
        serde_yaml::from_str(raw).map_err(|e| ConfigError::Parse(format!("{path}: {e}")))?;
    set_path_value(doc, path, parsed)
}

pub fn set_path_value(doc: &mut Value, path: &str, new: Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = path.split('.').collect();
    if path.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(path.to_string()));
    }
    let parts = if parts.len() == 1 && KINDED_SECTIONS.contains(&parts[0]) && !new.is_mapping() {
        vec![parts[0], "kind"]
    } else {
        parts
    };
    expand_kinded(doc);

    let mut cursor = doc;
    for part in &parts[..parts.len() - 1] {
        if cursor.is_null() {
            *cursor = Value::Mapping(Default::default());
        }
        let map = cursor
            .as_mapping_mut()
            .ok_or_else(|| invalid(path, "path crosses a non-mapping value"))?;
        cursor = map
            .entry(Value::String(part.to_string()))
            .or_insert(Value::Null);
    }
    if cursor.is_null() {
        *cursor = Value::Mapping(Default::default());
    }
    let map = cursor
        .as_mapping_mut()
        .ok_or_else(|| invalid(path, "path crosses a non-mapping value"))?;
    map.insert(Value::String(parts[parts.len() - 1].to_string()), new);
    Ok(())
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent 64-bit seed for the stream `(label, index)`.
///
/// SplitMix64 finalizer chained over the parent seed, the label length, each
/// label byte, and the index.
pub fn derive_seed(config_seed: u64, stream_label: &str, index: u64) -> u64 {
    let mut h = splitmix64(config_seed);
    h = splitmix64(h ^ stream_label.len() as u64);
    for &b in stream_label.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// Deterministic generator for a derived seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
