//! Aggregation strategies and round policies: client selection, update
//! combination, straggler handling and collaborator outages.

mod registry;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcore::{CollaboratorId, ModelParams, ModelUpdate};
use crate::seed::{self, Stream};

pub use registry::{StrategyFactory, StrategyRegistry};

/// How the aggregator treats selected collaborators that did not respond.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StragglerPolicy {
    /// Aggregate only fresh responses; a round with none fails.
    #[default]
    Drop,
    /// Substitute each non-responder's last received update, if any.
    ReuseStale,
    /// Aggregate the first `ceil(f * |selected|)` responses in arrival order.
    Deadline(f64),
}

impl StragglerPolicy {
    pub fn validate(&self) -> Result<()> {
        if let StragglerPolicy::Deadline(f) = *self {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("deadline fraction must be in (0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    All,
    /// `ceil(C * K)` collaborators sampled without replacement per round.
    Fraction(f64),
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if let SelectionPolicy::Fraction(c) = *self {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::Config(format!("selection fraction must be in (0, 1], got {c}")));
            }
        }
        Ok(())
    }
}

/// Picks the collaborators taking part in `round`. The result keeps the
/// input order.
pub fn select_clients(
    policy: SelectionPolicy,
    seed: u64,
    round: usize,
    collaborators: &[CollaboratorId],
) -> Vec<CollaboratorId> {
    let k = collaborators.len();
    match policy {
        SelectionPolicy::All => collaborators.to_vec(),
        SelectionPolicy::Fraction(c) => {
            let m = ((c * k as f64).ceil() as usize).clamp(1.min(k), k);
            if m == k {
                return collaborators.to_vec();
            }
            let mut rng = seed::rng(seed::derive(&[seed, round as u64, Stream::Select as u64]));
            let mut picked = rand::seq::index::sample(&mut rng, k, m).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| collaborators[i].clone()).collect()
        }
    }
}

/// Arrival order of responses within a round: ascending hash of
/// `(seed, round, collaborator id)`.
pub fn response_order(seed: u64, round: usize, ids: &[CollaboratorId]) -> Vec<CollaboratorId> {
    let mut keyed: Vec<(u64, &CollaboratorId)> = ids
        .iter()
        .map(|id| (seed::round_seed(seed, round, id, Stream::Response), id))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, id)| id.clone()).collect()
}

/// Updates the aggregator combines this round.
///
/// `responded` holds the fresh updates (ids must be among `selected`);
/// `stale` maps collaborator ids to their last received update. The output is
/// in `selected` order.
pub fn apply_straggler_policy(
    policy: StragglerPolicy,
    seed: u64,
    round: usize,
    selected: &[CollaboratorId],
    responded: &[ModelUpdate],
    stale: &BTreeMap<CollaboratorId, ModelUpdate>,
) -> Result<Vec<ModelUpdate>> {
    let fresh: BTreeMap<&str, &ModelUpdate> = responded
        .iter()
        .map(|u| (u.collaborator_id.as_str(), u))
        .collect();
    if let Some(stray) = fresh.keys().find(|id| !selected.iter().any(|s| s == *id)) {
        return Err(Error::ContractViolation(format!(
            "collaborator {stray} responded without being selected"
        )));
    }
    let effective: Vec<ModelUpdate> = match policy {
        StragglerPolicy::Drop => selected
            .iter()
            .filter_map(|id| fresh.get(id.as_str()).map(|u| (*u).clone()))
            .collect(),
        StragglerPolicy::ReuseStale => selected
            .iter()
            .filter_map(|id| {
                fresh
                    .get(id.as_str())
                    .map(|u| (*u).clone())
                    .or_else(|| stale.get(id).cloned())
            })
            .collect(),
        StragglerPolicy::Deadline(f) => {
            policy.validate()?;
            let quota = (f * selected.len() as f64).ceil() as usize;
            let arrived: Vec<CollaboratorId> = fresh.keys().map(|s| s.to_string()).collect();
            let on_time: Vec<CollaboratorId> = response_order(seed, round, &arrived)
                .into_iter()
                .take(quota)
                .collect();
            selected
                .iter()
                .filter(|id| on_time.contains(id))
                .map(|id| fresh[id.as_str()].clone())
                .collect()
        }
    };
    if effective.is_empty() {
        return Err(Error::RoundFailed {
            round,
            reason: format!("no usable updates under the {policy:?} straggler policy"),
        });
    }
    Ok(effective)
}

fn check_dims(updates: &[ModelUpdate], prev: &ModelParams) -> Result<usize> {
    let first = updates.first().ok_or(Error::EmptyUpdates)?;
    let p = first.params.len();
    for u in updates {
        if u.params.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: u.params.len(),
            });
        }
    }
    if prev.len() != p {
        return Err(Error::DimensionMismatch {
            expected: prev.len(),
            got: p,
        });
    }
    Ok(p)
}

fn weighted_mean(updates: &[ModelUpdate], prev: &ModelParams, weights: &[f64]) -> Result<ModelParams> {
    let p = check_dims(updates, prev)?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Config("aggregation weights must sum to a positive value".into()));
    }
    let mut out = vec![0.0; p];
    for (u, w) in updates.iter().zip(weights) {
        let share = w / total;
        for (o, v) in out.iter_mut().zip(u.params.values()) {
            *o += share * v;
        }
    }
    // A lone update must come back bit-for-bit.
    if updates.len() == 1 {
        out.copy_from_slice(updates[0].params.values());
    }
    ModelParams::new(out, prev.wire_width())
}

/// Sample-count weighted coordinatewise average.
pub fn fedavg_combine(updates: &[ModelUpdate], prev: &ModelParams) -> Result<ModelParams> {
    let weights: Vec<f64> = updates.iter().map(|u| u.n_samples as f64).collect();
    weighted_mean(updates, prev, &weights)
}

/// Unweighted coordinatewise average.
pub fn uniform_combine(updates: &[ModelUpdate], prev: &ModelParams) -> Result<ModelParams> {
    weighted_mean(updates, prev, &vec![1.0; updates.len()])
}

/// Average weighted by each collaborator's validation score of the model it
/// received. Falls back to uniform weights when every score is zero.
pub fn val_score_weighted_combine(updates: &[ModelUpdate], prev: &ModelParams) -> Result<ModelParams> {
    let weights: Vec<f64> = updates.iter().map(|u| u.val_score).collect();
    if weights.iter().all(|w| *w == 0.0) {
        return uniform_combine(updates, prev);
    }
    weighted_mean(updates, prev, &weights)
}

/// Server-side hooks of a federated round.
///
/// Implementations must be pure given their inputs so that runs stay
/// reproducible.
pub trait AggregationStrategy: Send + Sync {
    fn name(&self) -> &str;

    fn select(&self, seed: u64, round: usize, collaborators: &[CollaboratorId]) -> Vec<CollaboratorId>;

    fn combine(&self, updates: &[ModelUpdate], previous: &ModelParams) -> Result<ModelParams>;

    fn straggler_policy(&self) -> StragglerPolicy {
        StragglerPolicy::Drop
    }

    /// Bytes of one serialized update payload (excluding metadata). Override
    /// for compressed update encodings.
    fn update_payload_bytes(&self, params: &ModelParams) -> u64 {
        params.wire_size()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    FedAvg,
    Uniform,
    ValScoreWeighted,
}

impl CombineRule {
    pub fn combine(self, updates: &[ModelUpdate], prev: &ModelParams) -> Result<ModelParams> {
        match self {
            CombineRule::FedAvg => fedavg_combine(updates, prev),
            CombineRule::Uniform => uniform_combine(updates, prev),
            CombineRule::ValScoreWeighted => val_score_weighted_combine(updates, prev),
        }
    }
}

/// JSON parameter block shared by the built-in strategies.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyParams {
    pub selection: SelectionPolicy,
    pub straggler: StragglerPolicy,
}

impl StrategyParams {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.straggler.validate()
    }
}

/// A built-in strategy: a combine rule plus selection and straggler policies.
#[derive(Debug, Clone)]
pub struct StandardStrategy {
    name: String,
    rule: CombineRule,
    params: StrategyParams,
}

impl StandardStrategy {
    pub fn new(name: impl Into<String>, rule: CombineRule, params: StrategyParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            name: name.into(),
            rule,
            params,
        })
    }

    pub fn fedavg() -> Self {
        Self {
            name: "fedavg".into(),
            rule: CombineRule::FedAvg,
            params: StrategyParams::default(),
        }
    }

    pub fn params(&self) -> &StrategyParams {
        &self.params
    }
}

impl AggregationStrategy for StandardStrategy {
    fn name(&self) -> &str {
        &self.name
    }

    fn select(&self, seed: u64, round: usize, collaborators: &[CollaboratorId]) -> Vec<CollaboratorId> {
        select_clients(self.params.selection, seed, round, collaborators)
    }

    fn combine(&self, updates: &[ModelUpdate], previous: &ModelParams) -> Result<ModelParams> {
        self.rule.combine(updates, previous)
    }

    fn straggler_policy(&self) -> StragglerPolicy {
        self.params.straggler
    }
}

/// Which collaborators are reachable in a given round.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OutageModel {
    #[default]
    Always,
    /// Each collaborator is independently available with probability
    /// `p_avail` every round.
    Bernoulli { p_avail: f64 },
    /// Explicit per-round availability; index 0 is round 1. Collaborators not
    /// listed are always available.
    Schedule { schedule: BTreeMap<CollaboratorId, Vec<bool>> },
}

impl OutageModel {
    pub fn validate(&self, rounds: usize) -> Result<()> {
        match self {
            OutageModel::Always => Ok(()),
            OutageModel::Bernoulli { p_avail } => {
                if *p_avail > 0.0 && *p_avail <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("p_avail must be in (0, 1], got {p_avail}")))
                }
            }
            OutageModel::Schedule { schedule } => {
                match schedule.iter().find(|(_, s)| s.len() < rounds) {
                    Some((id, s)) => Err(Error::Config(format!(
                        "availability schedule for {id} covers {} rounds, need {rounds}",
                        s.len()
                    ))),
                    None => Ok(()),
                }
            }
        }
    }

    /// `round` is 1-based.
    pub fn is_available(&self, seed: u64, round: usize, id: &str) -> bool {
        match self {
            OutageModel::Always => true,
            OutageModel::Bernoulli { p_avail } => {
                if *p_avail >= 1.0 {
                    return true;
                }
                let mut rng = seed::rng(seed::round_seed(seed, round, id, Stream::Outage));
                rand::Rng::random::<f64>(&mut rng) < *p_avail
            }
            OutageModel::Schedule { schedule } => schedule
                .get(id)
                .and_then(|s| s.get(round - 1).copied())
                .unwrap_or(true),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v: &[f64]) -> ModelParams {
        ModelParams::new(v.to_vec(), 4).unwrap()
    }

    fn update(id: &str, v: &[f64], n: usize) -> ModelUpdate {
        ModelUpdate {
            collaborator_id: id.into(),
            params: params(v),
            val_score: 0.5,
            n_samples: n,
            round: 1,
        }
    }

    fn ids(n: usize) -> Vec<CollaboratorId> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn fedavg_examples() {
        let prev = params(&[0.0, 0.0]);
        let out = fedavg_combine(&[update("a", &[0.0, 2.0], 1), update("b", &[2.0, 0.0], 1)], &prev).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0]);

        let a = [4.0, -8.0];
        let b = [8.0, 4.0];
        let out = fedavg_combine(&[update("a", &a, 3), update("b", &b, 1)], &prev).unwrap();
        let expected: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.75 * x + 0.25 * y).collect();
        assert_eq!(out.values(), expected.as_slice());

        let single = [0.1, 0.7];
        assert_eq!(fedavg_combine(&[update("a", &single, 9)], &prev).unwrap().values(), &single);
    }

    #[test]
    fn uniform_examples() {
        let prev = params(&[0.0, 0.0]);
        let a = [4.0, -8.0];
        let b = [8.0, 4.0];
        let out = uniform_combine(&[update("a", &a, 3), update("b", &b, 1)], &prev).unwrap();
        assert_eq!(out.values(), &[6.0, -2.0]);
        let single = [0.3, 0.1];
        assert_eq!(uniform_combine(&[update("a", &single, 2)], &prev).unwrap().values(), &single);
        let out = uniform_combine(&[update("a", &[0.0, 2.0], 1), update("b", &[2.0, 0.0], 5)], &prev).unwrap();
        assert_eq!(out.values(), &[1.0, 1.0]);
    }

    #[test]
    fn combine_errors() {
        let prev = params(&[0.0, 0.0]);
        assert!(matches!(fedavg_combine(&[], &prev), Err(Error::EmptyUpdates)));
        assert!(matches!(uniform_combine(&[], &prev), Err(Error::EmptyUpdates)));
        let bad = [update("a", &[1.0, 2.0], 1), update("b", &[1.0], 1)];
        assert!(matches!(fedavg_combine(&bad, &prev), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn selection_examples() {
        let all = ids(5);
        assert_eq!(select_clients(SelectionPolicy::Fraction(1.0), 3, 1, &all), all);
        let picked = select_clients(SelectionPolicy::Fraction(0.4), 3, 1, &all);
        assert_eq!(picked.len(), 2);
        assert_eq!(picked, select_clients(SelectionPolicy::Fraction(0.4), 3, 1, &all));
        let one = ids(1);
        assert_eq!(select_clients(SelectionPolicy::Fraction(0.1), 3, 1, &one), one);
        assert_eq!(select_clients(SelectionPolicy::All, 3, 1, &one), one);
    }

    #[test]
    fn selection_varies_across_rounds() {
        let all = ids(10);
        let picks: Vec<_> = (1..=20)
            .map(|r| select_clients(SelectionPolicy::Fraction(0.3), 5, r, &all))
            .collect();
        assert!(picks.iter().all(|p| p.len() == 3));
        assert!(picks.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn every_policy_keeps_full_participation() {
        let sel = ids(3);
        let fresh: Vec<_> = sel.iter().map(|id| update(id, &[1.0], 1)).collect();
        for policy in [StragglerPolicy::Drop, StragglerPolicy::ReuseStale, StragglerPolicy::Deadline(1.0)] {
            let eff = apply_straggler_policy(policy, 1, 1, &sel, &fresh, &BTreeMap::new()).unwrap();
            let got: Vec<_> = eff.iter().map(|u| u.collaborator_id.clone()).collect();
            assert_eq!(got, sel);
        }
    }

    #[test]
    fn drop_keeps_responders() {
        let sel = ids(3);
        let fresh = vec![update("c0", &[1.0], 1), update("c2", &[1.0], 1)];
        let eff = apply_straggler_policy(StragglerPolicy::Drop, 1, 1, &sel, &fresh, &BTreeMap::new()).unwrap();
        assert_eq!(eff.len(), 2);
        let err = apply_straggler_policy(StragglerPolicy::Drop, 1, 4, &sel, &[], &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::RoundFailed { round: 4, .. }));
    }

    #[test]
    fn reuse_stale_substitutes_cached_update() {
        let sel = ids(3);
        let mut cache = BTreeMap::new();
        let mut old = update("c1", &[9.0], 7);
        old.round = 2;
        cache.insert("c1".to_string(), old.clone());
        let fresh = vec![update("c0", &[1.0], 1), update("c2", &[1.0], 1)];
        let eff = apply_straggler_policy(StragglerPolicy::ReuseStale, 1, 3, &sel, &fresh, &cache).unwrap();
        assert_eq!(eff.len(), 3);
        assert_eq!(eff[1], old);
        assert_eq!(eff[1].n_samples, 7);
    }

    #[test]
    fn deadline_takes_earliest_arrivals() {
        let sel = ids(4);
        let fresh: Vec<_> = sel.iter().map(|id| update(id, &[1.0], 1)).collect();
        let eff = apply_straggler_policy(StragglerPolicy::Deadline(0.5), 42, 2, &sel, &fresh, &BTreeMap::new()).unwrap();
        let order = response_order(42, 2, &sel);
        let mut expected: Vec<_> = order[..2].to_vec();
        expected.sort_by_key(|id| sel.iter().position(|s| s == id));
        let got: Vec<_> = eff.iter().map(|u| u.collaborator_id.clone()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn outage_models() {
        let always = OutageModel::Always;
        assert!(always.is_available(1, 1, "a"));
        let half = OutageModel::Bernoulli { p_avail: 0.5 };
        let hits = (1..=400).filter(|r| half.is_available(9, *r, "a")).count();
        assert!((150..250).contains(&hits), "{hits}");
        assert_eq!(half.is_available(9, 3, "a"), half.is_available(9, 3, "a"));
        assert!(OutageModel::Bernoulli { p_avail: 0.0 }.validate(1).is_err());
        let sched = OutageModel::Schedule {
            schedule: [("a".to_string(), vec![true, false])].into_iter().collect(),
        };
        assert!(sched.validate(3).is_err());
        sched.validate(2).unwrap();
        assert!(!sched.is_available(0, 2, "a"));
        assert!(sched.is_available(0, 2, "b"));
    }

    #[test]
    fn params_json_shapes() {
        let p: StrategyParams =
            serde_json::from_str(r#"{"selection":{"fraction":0.4},"straggler":{"deadline":0.5}}"#).unwrap();
        assert_eq!(p.selection, SelectionPolicy::Fraction(0.4));
        assert_eq!(p.straggler, StragglerPolicy::Deadline(0.5));
        let p: StrategyParams = serde_json::from_str(r#"{"straggler":"reuse_stale"}"#).unwrap();
        assert_eq!(p.selection, SelectionPolicy::All);
        assert_eq!(p.straggler, StragglerPolicy::ReuseStale);
        let o: OutageModel = serde_json::from_str(r#"{"mode":"bernoulli","p_avail":0.8}"#).unwrap();
        assert_eq!(o, OutageModel::Bernoulli { p_avail: 0.8 });
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_updates() -> impl Strategy<Value = Vec<ModelUpdate>> {
            (1usize..5).prop_flat_map(|p| {
                prop::collection::vec(
                    (prop::collection::vec(-10.0f64..10.0, p), 1usize..50),
                    1..6,
                )
                .prop_map(|raw| {
                    raw.into_iter()
                        .enumerate()
                        .map(|(i, (v, n))| update(&format!("c{i}"), &v, n))
                        .collect()
                })
            })
        }

        proptest! {
            #[test]
            fn fedavg_is_convex(ups in arb_updates()) {
                let prev = ModelParams::zeros(ups[0].params.len(), 4);
                let out = fedavg_combine(&ups, &prev).unwrap();
                for j in 0..out.len() {
                    let lo = ups.iter().map(|u| u.params.values()[j]).fold(f64::INFINITY, f64::min);
                    let hi = ups.iter().map(|u| u.params.values()[j]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(out.values()[j] >= lo - 1e-12 && out.values()[j] <= hi + 1e-12);
                }
            }

            #[test]
            fn fedavg_permutation_and_scale_invariant(ups in arb_updates(), k in 1usize..7, rot in 0usize..6) {
                let prev = ModelParams::zeros(ups[0].params.len(), 4);
                let base = fedavg_combine(&ups, &prev).unwrap();
                let mut permuted = ups.clone();
                let r = rot % permuted.len();
                permuted.rotate_left(r);
                permuted.reverse();
                let scaled: Vec<_> = ups.iter().cloned().map(|mut u| { u.n_samples *= k; u }).collect();
                for other in [fedavg_combine(&permuted, &prev).unwrap(), fedavg_combine(&scaled, &prev).unwrap()] {
                    for (a, b) in base.values().iter().zip(other.values()) {
                        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                    }
                }
            }
        }
    }
}
