//! Marketplace lifecycle: split, per-round train/submit/aggregate/settle, evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{build_aggregator, Aggregator, RoundContext, Submission};
use crate::attack::{assign_roles, poison_dataset, sybil_postprocess, AttackSpec, SellerRole};
use crate::config::{derive_seed, rng_for, ConfigError, DatasetKind, MarketplaceConfig};
use crate::data::{load_idx, make_synthetic, split_market, train_test_split, Dataset, Partition, SplitParams, SyntheticSpec};
use crate::error::Result;
use crate::metrics::attack_success_rate;
use crate::model::{distance, local_train, Architecture, GradientVector, ModelParams, TrainSpec};

/// One seller's submission as recorded in the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub seller_id: usize,
    pub num_samples: usize,
    pub score: f64,
    /// `||g_i - g_B||_2` against this round's root gradient.
    pub divergence: f64,
    pub paid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLedger {
    /// 1-based round index.
    pub round: usize,
    pub sampled: Vec<usize>,
    pub selected: Vec<usize>,
    pub weights: Vec<f64>,
    pub submissions: Vec<SubmissionRecord>,
    /// Number of paid gradients this round.
    pub cost: usize,
    pub accuracy: f64,
    pub asr: Option<f64>,
}

/// Full record of one repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub config_hash: String,
    pub seed: u64,
    pub repeat: usize,
    pub num_sellers: usize,
    pub roles: Vec<SellerRole>,
    pub ledgers: Vec<RoundLedger>,
    pub final_model: ModelParams,
}

/// Train and test sets before the marketplace split.
pub fn load_data(config: &MarketplaceConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let ds = &config.dataset;
    match ds.kind {
        DatasetKind::Synthetic => {
            let spec = SyntheticSpec {
                classes: ds.classes,
                dim: ds.dim,
                samples: ds.samples,
                separation: ds.separation,
                noise_std: ds.noise_std,
            };
            let all = make_synthetic(&spec, derive_seed(seed, "dataset", 0))?;
            Ok(train_test_split(&all, ds.test_fraction))
        }
        DatasetKind::Idx => {
            let path = |p: &Option<std::path::PathBuf>, field: &'static str| {
                p.clone().ok_or(ConfigError::Invalid {
                    field: field.into(),
                    reason: "required for idx datasets".into(),
                })
            };
            let train = load_idx(
                &path(&ds.train_images, "dataset.train_images")?,
                &path(&ds.train_labels, "dataset.train_labels")?,
            )?;
            let test = load_idx(
                &path(&ds.test_images, "dataset.test_images")?,
                &path(&ds.test_labels, "dataset.test_labels")?,
            )?;
            Ok((train, test))
        }
    }
}

/// Live marketplace state between rounds.
#[derive(Clone)]
pub struct Marketplace {
    seed: u64,
    sampled_count: usize,
    train_spec: TrainSpec,
    attack: AttackSpec,
    partition: Partition,
    seller_data: Vec<Dataset>,
    roles: Vec<SellerRole>,
    global: ModelParams,
    aggregator: Box<dyn Aggregator>,
    last_applied: GradientVector,
    round: usize,
}

impl Marketplace {
    /// Split the data, assign roles, poison malicious sellers, and initialize the model.
    pub fn new(config: &MarketplaceConfig, seed: u64, train: &Dataset, test: &Dataset) -> Result<Self> {
        config.validate()?;
        let attack = AttackSpec::from_config(&config.attack, train.layout(), train.dim())?;
        let partition = split_market(
            train,
            test,
            &SplitParams::from_config(config),
            attack.trigger.as_ref(),
            derive_seed(seed, "split", 0),
        )?;
        let roles = assign_roles(
            config.num_sellers,
            config.malicious_count(),
            config.attack.kind,
            derive_seed(seed, "roles", 0),
        );
        let seller_data = partition
            .seller_sets
            .iter()
            .zip(&roles)
            .map(|(data, role)| {
                if role.is_malicious() {
                    poison_dataset(data, &attack, derive_seed(seed, "poison", role.seller_id as u64))
                } else {
                    data.clone()
                }
            })
            .collect();
        let arch = Architecture::from(&config.model());
        let global = ModelParams::init(arch, train.dim(), train.classes(), derive_seed(seed, "model", 0));
        let dim = global.len();
        Ok(Self {
            seed,
            sampled_count: config.sampled_count(),
            train_spec: TrainSpec {
                epochs: config.local_epochs,
                batch_size: config.batch_size,
                lr: config.local_lr,
            },
            attack,
            partition,
            seller_data,
            roles,
            global,
            aggregator: build_aggregator(&config.aggregator),
            last_applied: GradientVector::zeros(dim),
            round: 0,
        })
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn roles(&self) -> &[SellerRole] {
        &self.roles
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    /// Local data as seen by each seller, after poisoning.
    pub fn seller_data(&self) -> &[Dataset] {
        &self.seller_data
    }

    /// Aggregated delta applied in the most recent round.
    pub fn last_applied(&self) -> &GradientVector {
        &self.last_applied
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Seller ids sampled in round `t`, ascending.
    pub fn sample_sellers(&self, t: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.roles.len()).collect();
        let mut rng = rng_for(derive_seed(self.seed, "sample", t as u64));
        let (chosen, _) = ids.partial_shuffle(&mut rng, self.sampled_count);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn seller_seed(&self, seller: usize, t: usize) -> u64 {
        derive_seed(derive_seed(self.seed, "seller-local", seller as u64), "round", t as u64)
    }

    /// Run the next round and return its ledger.
    pub fn run_round(&mut self) -> Result<RoundLedger> {
        let t = self.round + 1;
        let sampled = self.sample_sellers(t);

        let raw: Vec<GradientVector> = sampled
            .par_iter()
            .map(|&i| local_train(&self.global, &self.seller_data[i], &self.train_spec, self.seller_seed(i, t)))
            .collect::<std::result::Result<_, _>>()?;
        let mut submissions = Vec::with_capacity(sampled.len());
        for (&i, delta) in sampled.iter().zip(raw) {
            let delta = if self.roles[i].sybil_group.is_some() {
                sybil_postprocess(&delta, &self.last_applied, self.attack.mimicry_lambda)?
            } else {
                delta
            };
            submissions.push(Submission {
                seller_id: i,
                delta,
                num_samples: self.seller_data[i].len(),
            });
        }

        let root = &self.partition.buyer_root;
        let buyer_reference = if root.is_empty() {
            GradientVector::zeros(self.global.len())
        } else {
            local_train(&self.global, root, &self.train_spec, derive_seed(self.seed, "buyer", t as u64))?
        };
        let ctx = RoundContext {
            global: &self.global,
            buyer_reference: &buyer_reference,
            buyer_root: root,
        };
        let result = self.aggregator.aggregate(&submissions, &ctx)?;

        self.global.add_assign(result.aggregated.as_slice())?;
        self.last_applied = result.aggregated;
        self.round = t;

        let records = submissions
            .iter()
            .zip(&result.scores)
            .map(|(s, &score)| SubmissionRecord {
                seller_id: s.seller_id,
                num_samples: s.num_samples,
                score,
                divergence: distance(s.delta.as_slice(), buyer_reference.as_slice()),
                paid: result.selected.binary_search(&s.seller_id).is_ok(),
            })
            .collect();
        let accuracy = self.global.accuracy(&self.partition.test_clean)?.unwrap_or(0.0);
        let asr = match &self.attack.trigger {
            Some(trigger) => attack_success_rate(&self.global, &self.partition.test_triggered, trigger.target_label())?,
            None => None,
        };
        Ok(RoundLedger {
            round: t,
            sampled,
            cost: result.selected.len(),
            selected: result.selected,
            weights: result.weights,
            submissions: records,
            accuracy,
            asr,
        })
    }
}

/// Run every round of one repeat on already loaded data.
pub fn run_with_data(
    config: &MarketplaceConfig,
    repeat: usize,
    train: &Dataset,
    test: &Dataset,
) -> Result<RunTrace> {
    let seed = config.repeat_seed(repeat);
    let mut market = Marketplace::new(config, seed, train, test)?;
    let mut ledgers = Vec::with_capacity(config.num_rounds);
    for _ in 0..config.num_rounds {
        ledgers.push(market.run_round()?);
    }
    Ok(RunTrace {
        config_hash: config.config_hash(),
        seed,
        repeat,
        num_sellers: config.num_sellers,
        roles: market.roles.clone(),
        ledgers,
        final_model: market.global,
    })
}

/// Run repeat `r` end to end.
pub fn run_experiment(config: &MarketplaceConfig, repeat: usize) -> Result<RunTrace> {
    config.validate()?;
    let (train, test) = load_data(config, config.repeat_seed(repeat))?;
    run_with_data(config, repeat, &train, &test)
}

/// Run all configured repeats, concurrently, in repeat order.
///
/// Synthetic data is regenerated per repeat; file-backed data is read once.
pub fn run_repeats(config: &MarketplaceConfig) -> Result<Vec<RunTrace>> {
    config.validate()?;
    match config.dataset.kind {
        DatasetKind::Synthetic => (0..config.repeats)
            .into_par_iter()
            .map(|r| run_experiment(config, r))
            .collect(),
        DatasetKind::Idx => {
            let (train, test) = load_data(config, config.seed)?;
            (0..config.repeats)
                .into_par_iter()
                .map(|r| run_with_data(config, r, &train, &test))
                .collect()
        }
    }
}

/// Cumulative unit payments per seller.
pub fn settle(trace: &RunTrace) -> Vec<u64> {
    let mut payments = vec![0u64; trace.num_sellers];
    for ledger in &trace.ledgers {
        for record in &ledger.submissions {
            if record.paid {
                payments[record.seller_id] += 1;
            }
        }
    }
    payments
}
