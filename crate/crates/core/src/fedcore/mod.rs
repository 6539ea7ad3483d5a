//! Round-synchronous federation: aggregator, collaborators, consensus
//! checkpointing and the communication ledger.
//!
//! Each round runs five steps:
//!
//! 1. the strategy selects collaborators;
//! 2. the aggregator sends the consensus model to every selected collaborator;
//! 3. each reachable collaborator validates the received model on its local
//!    validation split, then trains it on its local training split;
//! 4. updates and validation scores travel back to the aggregator;
//! 5. the strategy combines the usable updates into the next consensus.
//!
//! Collaborator work within a round runs on the ambient rayon pool; results
//! are collected in selection order, so thread count never changes output.

mod ledger;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{apply_straggler_policy, AggregationStrategy, OutageModel};
use crate::error::{Error, Result};
use crate::reftrain::Trainer;
use crate::seed::{self, Stream};

pub use ledger::{communication_cost, CommLedger, CostReport, LedgerTotals, RoundRecord};

pub type CollaboratorId = String;

/// Default bytes per parameter on the wire.
pub const DEFAULT_WIRE_WIDTH: u32 = 4;
/// Envelope per update: validation score, sample count and collaborator id.
pub const DEFAULT_METADATA_BYTES: u64 = 16;

/// Flat parameter vector exchanged between aggregator and collaborators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    values: Vec<f64>,
    wire_width: u32,
}

impl ModelParams {
    pub fn new(values: Vec<f64>, wire_width: u32) -> Result<Self> {
        if wire_width == 0 {
            return Err(Error::Config("wire width must be at least one byte".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ContractViolation(format!(
                "parameter {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self { values, wire_width })
    }

    pub fn zeros(len: usize, wire_width: u32) -> Self {
        Self {
            values: vec![0.0; len],
            wire_width: wire_width.max(1),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn wire_width(&self) -> u32 {
        self.wire_width
    }

    pub fn with_wire_width(mut self, wire_width: u32) -> Self {
        self.wire_width = wire_width.max(1);
        self
    }

    /// Serialized size: `P * wire_width` bytes.
    pub fn wire_size(&self) -> u64 {
        self.values.len() as u64 * u64::from(self.wire_width)
    }
}

/// An institution taking part in the federation.
#[derive(Debug, Clone)]
pub struct CollaboratorState<D> {
    pub id: CollaboratorId,
    pub train_set: D,
    pub val_set: D,
    /// Local training-case count, used as the aggregation weight.
    pub n_samples: usize,
}

impl<D> CollaboratorState<D> {
    pub fn new(id: impl Into<CollaboratorId>, train_set: D, val_set: D, n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::Config("collaborator needs at least one training sample".into()));
        }
        Ok(Self {
            id: id.into(),
            train_set,
            val_set,
            n_samples,
        })
    }
}

/// What a collaborator returns at the end of its local step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub collaborator_id: CollaboratorId,
    pub params: ModelParams,
    /// Local validation score of the consensus model the collaborator received.
    pub val_score: f64,
    pub n_samples: usize,
    /// Round in which this update was produced.
    pub round: usize,
}

/// Local training schedule applied by every collaborator each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalPlan {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LocalPlan {
    fn default() -> Self {
        Self {
            epochs: 1,
            learning_rate: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub rounds: usize,
    pub seed: u64,
    pub wire_width: u32,
    pub metadata_bytes: u64,
    pub local: LocalPlan,
    pub outage: OutageModel,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 1,
            seed: 0,
            wire_width: DEFAULT_WIRE_WIDTH,
            metadata_bytes: DEFAULT_METADATA_BYTES,
            local: LocalPlan::default(),
            outage: OutageModel::Always,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("at least one round is required".into()));
        }
        if self.wire_width == 0 {
            return Err(Error::Config("wire width must be at least one byte".into()));
        }
        if !self.local.learning_rate.is_finite() || self.local.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.local.learning_rate
            )));
        }
        self.outage.validate(self.rounds)
    }
}

/// Consensus produced by one round, with the scores that drove it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSnapshot {
    pub round_index: usize,
    /// Sample-weighted mean of the fresh validation scores; absent when the
    /// round aggregated only stale updates.
    pub consensus_val_score: Option<f64>,
    pub local_val_scores: BTreeMap<CollaboratorId, f64>,
    pub consensus: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub rounds: Vec<RoundSnapshot>,
}

impl History {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationOutcome {
    pub final_model: ModelParams,
    pub initial_model: ModelParams,
    pub ledger: CommLedger,
    pub history: History,
}

/// Consensus of the round with the highest consensus validation score;
/// ties go to the earliest round.
pub fn checkpoint_select(history: &History) -> Result<&ModelParams> {
    let mut best: Option<(&RoundSnapshot, f64)> = None;
    for snap in &history.rounds {
        if let Some(score) = snap.consensus_val_score {
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((snap, score));
            }
        }
    }
    match best {
        Some((snap, _)) => Ok(&snap.consensus),
        None => history
            .rounds
            .last()
            .map(|s| &s.consensus)
            .ok_or(Error::EmptyHistory),
    }
}

fn check_unique_ids<D>(collaborators: &[CollaboratorState<D>]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for c in collaborators {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Config(format!("duplicate collaborator id {}", c.id)));
        }
        if c.n_samples == 0 {
            return Err(Error::Config(format!("collaborator {} has no training samples", c.id)));
        }
    }
    Ok(())
}

/// Runs `config.rounds` federated rounds and returns the best checkpoint, the
/// ledger and the per-round history.
pub fn run_federation<T: Trainer>(
    config: &FederationConfig,
    collaborators: &[CollaboratorState<T::Dataset>],
    trainer: &T,
    strategy: &dyn AggregationStrategy,
) -> Result<FederationOutcome> {
    config.validate()?;
    if collaborators.is_empty() {
        return Err(Error::Config("a federation needs at least one collaborator".into()));
    }
    check_unique_ids(collaborators)?;

    let init_seed = seed::derive(&[config.seed, Stream::Init as u64]);
    let initial = trainer
        .init_params(init_seed)
        .with_wire_width(config.wire_width);
    let p = initial.len();
    let by_id: BTreeMap<&str, &CollaboratorState<T::Dataset>> =
        collaborators.iter().map(|c| (c.id.as_str(), c)).collect();
    let ids: Vec<CollaboratorId> = collaborators.iter().map(|c| c.id.clone()).collect();

    let mut consensus = initial.clone();
    let mut ledger = CommLedger::default();
    let mut history = History::default();
    let mut stale: BTreeMap<CollaboratorId, ModelUpdate> = BTreeMap::new();

    for round in 1..=config.rounds {
        // (1) selection
        let mut selected = strategy.select(config.seed, round, &ids);
        selected.retain(|id| by_id.contains_key(id.as_str()));
        selected.dedup();
        if selected.is_empty() {
            return Err(Error::RoundFailed {
                round,
                reason: format!("strategy {} selected no collaborators", strategy.name()),
            });
        }

        // (2) broadcast; bytes are spent on every selected collaborator
        let bytes_down = selected.len() as u64 * consensus.wire_size();

        // (3) validate the received model, then train locally
        let reachable: Vec<&CollaboratorState<T::Dataset>> = selected
            .iter()
            .filter(|id| config.outage.is_available(config.seed, round, id))
            .map(|id| by_id[id.as_str()])
            .collect();
        let plan = config.local;
        let results: Vec<Result<ModelUpdate>> = reachable
            .par_iter()
            .map(|collab| {
                let val_score = trainer.validate(&consensus, &collab.val_set);
                if !(0.0..=1.0).contains(&val_score) {
                    return Err(Error::ContractViolation(format!(
                        "validation score {val_score} from {} outside [0, 1]",
                        collab.id
                    )));
                }
                let train_seed = seed::round_seed(config.seed, round, &collab.id, Stream::Train);
                let trained = trainer.train(
                    &consensus,
                    &collab.train_set,
                    plan.epochs,
                    plan.learning_rate,
                    train_seed,
                );
                if trained.len() != p {
                    return Err(Error::ContractViolation(format!(
                        "trainer returned {} parameters for {}, expected {p}",
                        trained.len(),
                        collab.id
                    )));
                }
                Ok(ModelUpdate {
                    collaborator_id: collab.id.clone(),
                    params: trained.with_wire_width(config.wire_width),
                    val_score,
                    n_samples: collab.n_samples,
                    round,
                })
            })
            .collect();
        let fresh = results.into_iter().collect::<Result<Vec<_>>>()?;

        // (4) uploads
        let upload = strategy.update_payload_bytes(&consensus) + config.metadata_bytes;
        let bytes_up = fresh.len() as u64 * upload;

        let weight: usize = fresh.iter().map(|u| u.n_samples).sum();
        let consensus_val_score = (weight > 0).then(|| {
            fresh
                .iter()
                .map(|u| u.n_samples as f64 * u.val_score)
                .sum::<f64>()
                / weight as f64
        });

        // (5) aggregation barrier
        let effective = apply_straggler_policy(
            strategy.straggler_policy(),
            config.seed,
            round,
            &selected,
            &fresh,
            &stale,
        )?;
        let next = strategy
            .combine(&effective, &consensus)?
            .with_wire_width(config.wire_width);
        if next.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: next.len(),
            });
        }

        ledger.append(RoundRecord {
            round_index: round,
            selected: selected.clone(),
            responded: fresh.iter().map(|u| u.collaborator_id.clone()).collect(),
            aggregated: effective.iter().map(|u| u.collaborator_id.clone()).collect(),
            bytes_down,
            bytes_up,
            consensus_val_score,
        });
        history.rounds.push(RoundSnapshot {
            round_index: round,
            consensus_val_score,
            local_val_scores: fresh
                .iter()
                .map(|u| (u.collaborator_id.clone(), u.val_score))
                .collect(),
            consensus: next.clone(),
        });
        for u in fresh {
            stale.insert(u.collaborator_id.clone(), u);
        }
        consensus = next;
    }

    let final_model = checkpoint_select(&history)?.clone();
    Ok(FederationOutcome {
        final_model,
        initial_model: initial,
        ledger,
        history,
    })
}
