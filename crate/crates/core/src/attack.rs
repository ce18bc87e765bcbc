//! Attack plug-ins.
//!
//! Data-level poisoning (backdoor triggers, label flips) is applied once to
//! malicious sellers' local data at setup. Gradient-level Sybil mimicry
//! blends each colluding seller's delta toward a shared public target every
//! round.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::config::{rng_for, AttackConfig, AttackKind, Corner, TriggerConfig};
use crate::data::{DataError, Dataset, FeatureLayout, Sample};
use crate::model::{GradientVector, ModelError};

/// A backdoor trigger bound to a feature layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    config: TriggerConfig,
    target_label: usize,
    layout: FeatureLayout,
    dim: usize,
}

impl Trigger {
    pub fn new(
        config: &TriggerConfig,
        target_label: usize,
        layout: FeatureLayout,
        dim: usize,
    ) -> Result<Self, DataError> {
        match layout {
            FeatureLayout::Image { rows, cols } => {
                if config.patch_side > rows || config.patch_side > cols {
                    return Err(DataError::TriggerTooLarge {
                        side: config.patch_side,
                        rows,
                        cols,
                    });
                }
            }
            FeatureLayout::Flat => {
                if config.offset_dims > dim {
                    return Err(DataError::TriggerTooWide {
                        needed: config.offset_dims,
                        dim,
                    });
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            target_label,
            layout,
            dim,
        })
    }

    pub fn target_label(&self) -> usize {
        self.target_label
    }

    /// Write the trigger pattern into a feature vector, leaving the label alone.
    pub fn stamp(&self, features: &mut [f64]) {
        debug_assert_eq!(features.len(), self.dim);
        let value = self.config.value;
        match self.layout {
            FeatureLayout::Image { rows, cols } => {
                let side = self.config.patch_side;
                let (r0, c0) = match self.config.location {
                    Corner::TopLeft => (0, 0),
                    Corner::TopRight => (0, cols - side),
                    Corner::BottomLeft => (rows - side, 0),
                    Corner::BottomRight => (rows - side, cols - side),
                };
                for r in r0..r0 + side {
                    features[r * cols + c0..r * cols + c0 + side].fill(value);
                }
            }
            FeatureLayout::Flat => {
                let d = features.len();
                features[d - self.config.offset_dims..].fill(value);
            }
        }
    }

    /// Stamp the trigger and relabel to the target class.
    pub fn apply(&self, sample: &Sample) -> Sample {
        let mut out = sample.clone();
        self.stamp(&mut out.features);
        out.label = self.target_label;
        out
    }
}

pub fn apply_trigger(trigger: &Trigger, sample: &Sample) -> Sample {
    trigger.apply(sample)
}

/// Resolved attack parameters for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub poison_rate: f64,
    pub flip_fraction: f64,
    pub mimicry_lambda: f64,
    /// Present for trigger-based attacks.
    pub trigger: Option<Trigger>,
}

impl AttackSpec {
    pub fn from_config(
        config: &AttackConfig,
        layout: FeatureLayout,
        dim: usize,
    ) -> Result<Self, DataError> {
        let trigger = if config.kind.uses_trigger() {
            Some(Trigger::new(&config.trigger, config.target_label, layout, dim)?)
        } else {
            None
        };
        Ok(Self {
            kind: config.kind,
            poison_rate: config.poison_rate,
            flip_fraction: config.flip_fraction,
            mimicry_lambda: config.mimicry_lambda,
            trigger,
        })
    }

    pub fn none() -> Self {
        Self {
            kind: AttackKind::None,
            poison_rate: 0.0,
            flip_fraction: 0.0,
            mimicry_lambda: 1.0,
            trigger: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SellerFlag {
    Benign,
    Malicious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SellerRole {
    pub seller_id: usize,
    pub flag: SellerFlag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sybil_group: Option<usize>,
}

impl SellerRole {
    pub fn is_malicious(&self) -> bool {
        self.flag == SellerFlag::Malicious
    }
}

/// Flag the first `malicious` sellers of a seeded permutation as malicious.
///
/// Under `sybil_backdoor` all malicious sellers share Sybil group 0.
pub fn assign_roles(
    num_sellers: usize,
    malicious: usize,
    kind: AttackKind,
    seed: u64,
) -> Vec<SellerRole> {
    let mut order: Vec<usize> = (0..num_sellers).collect();
    order.shuffle(&mut rng_for(seed));
    let mut roles: Vec<SellerRole> = (0..num_sellers)
        .map(|seller_id| SellerRole {
            seller_id,
            flag: SellerFlag::Benign,
            sybil_group: None,
        })
        .collect();
    for &id in order.iter().take(malicious) {
        roles[id].flag = SellerFlag::Malicious;
        if kind == AttackKind::SybilBackdoor {
            roles[id].sybil_group = Some(0);
        }
    }
    roles
}

/// Number of samples touched by a rate: `round(rate * n)`.
pub fn poisoned_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64).round() as usize).min(n)
}

/// Poison a malicious seller's local data.
///
/// Backdoor variants trigger exactly `round(poison_rate * n)` seeded rows;
/// label flipping reassigns exactly `round(flip_fraction * n)` rows to a
/// uniformly drawn different class.
pub fn poison_dataset(data: &Dataset, spec: &AttackSpec, seed: u64) -> Dataset {
    let mut rng = rng_for(seed);
    let mut out = data.clone();
    let n = data.len();
    let mut rows: Vec<usize> = (0..n).collect();
    match spec.kind {
        AttackKind::None => {}
        AttackKind::Backdoor | AttackKind::SybilBackdoor => {
            let trigger = spec.trigger.as_ref().expect("trigger attacks carry a trigger");
            let count = poisoned_count(spec.poison_rate, n);
            let (chosen, _) = rows.partial_shuffle(&mut rng, count);
            for &i in chosen.iter() {
                out.set_sample(i, &trigger.apply(&data.sample(i)));
            }
        }
        AttackKind::LabelFlip => {
            let k = data.classes();
            let count = poisoned_count(spec.flip_fraction, n);
            let (chosen, _) = rows.partial_shuffle(&mut rng, count);
            for &i in chosen.iter() {
                let old = data.labels()[i];
                let others: Vec<usize> = (0..k).filter(|&c| c != old).collect();
                let new = *others.choose(&mut rng).expect("at least two classes");
                out.set_label(i, new);
            }
        }
    }
    out
}

/// Blend a raw delta toward the mimicry target: `lambda * raw + (1 - lambda) * target`.
pub fn sybil_postprocess(
    raw: &GradientVector,
    mimic_target: &GradientVector,
    lambda: f64,
) -> Result<GradientVector, ModelError> {
    if raw.len() != mimic_target.len() {
        return Err(ModelError::DimensionMismatch {
            expected: mimic_target.len(),
            actual: raw.len(),
        });
    }
    GradientVector::new(
        raw.as_slice()
            .iter()
            .zip(mimic_target.as_slice())
            .map(|(r, t)| lambda * r + (1.0 - lambda) * t)
            .collect(),
    )
}
