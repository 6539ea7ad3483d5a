use std::collections::BTreeMap;

use serde_json::Value;

use super::{AggregationStrategy, CombineRule, StandardStrategy, StrategyParams};
use crate::error::{Error, Result};

pub type StrategyFactory =
    Box<dyn Fn(&Value) -> Result<Box<dyn AggregationStrategy>> + Send + Sync>;

/// Strategies addressable by name from a federation config.
pub struct StrategyRegistry {
    factories: BTreeMap<String, StrategyFactory>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `fedavg`, `uniform` and `val_weighted`.
    pub fn with_defaults() -> Self {
        let mut reg = Self::empty();
        for (name, rule) in [
            ("fedavg", CombineRule::FedAvg),
            ("uniform", CombineRule::Uniform),
            ("val_weighted", CombineRule::ValScoreWeighted),
        ] {
            reg.register(name, move |params: &Value| {
                let parsed: StrategyParams = if params.is_null() {
                    StrategyParams::default()
                } else {
                    serde_json::from_value(params.clone()).map_err(|e| {
                        Error::Config(format!("invalid parameters for strategy {name}: {e}"))
                    })?
                };
                Ok(Box::new(StandardStrategy::new(name, rule, parsed)?) as Box<dyn AggregationStrategy>)
            });
        }
        reg
    }

    /// Registers (or replaces) a strategy under `name`.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&Value) -> Result<Box<dyn AggregationStrategy>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn build(&self, name: &str, params: &Value) -> Result<Box<dyn AggregationStrategy>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::UnknownStrategy {
            name: name.to_string(),
            registered: self.names(),
        })?;
        factory(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{SelectionPolicy, StragglerPolicy};
    use crate::fedcore::{ModelParams, ModelUpdate};

    #[test]
    fn builds_defaults() {
        let reg = StrategyRegistry::with_defaults();
        assert_eq!(reg.names(), vec!["fedavg", "uniform", "val_weighted"]);
        let s = reg
            .build("uniform", &serde_json::json!({"straggler": "reuse_stale"}))
            .unwrap();
        assert_eq!(s.name(), "uniform");
        assert_eq!(s.straggler_policy(), StragglerPolicy::ReuseStale);
        assert!(reg.build("fedavg", &Value::Null).is_ok());
    }

    #[test]
    fn unknown_name_lists_registered() {
        let reg = StrategyRegistry::with_defaults();
        let err = reg.build("foo", &Value::Null).err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("foo") && msg.contains("fedavg") && msg.contains("uniform"));
    }

    #[test]
    fn bad_params_rejected() {
        let reg = StrategyRegistry::with_defaults();
        assert!(reg.build("fedavg", &serde_json::json!({"selection": {"fraction": 1.5}})).is_err());
        assert!(reg.build("fedavg", &serde_json::json!({"bogus": 1})).is_err());
    }

    struct KeepPrevious;

    impl AggregationStrategy for KeepPrevious {
        fn name(&self) -> &str {
            "keep"
        }
        fn select(&self, seed: u64, round: usize, c: &[String]) -> Vec<String> {
            crate::aggregation::select_clients(SelectionPolicy::All, seed, round, c)
        }
        fn combine(&self, _: &[ModelUpdate], previous: &ModelParams) -> Result<ModelParams> {
            Ok(previous.clone())
        }
    }

    #[test]
    fn third_party_registration() {
        let mut reg = StrategyRegistry::with_defaults();
        reg.register("keep", |_| Ok(Box::new(KeepPrevious) as Box<dyn AggregationStrategy>));
        assert_eq!(reg.build("keep", &Value::Null).unwrap().name(), "keep");
    }
}
