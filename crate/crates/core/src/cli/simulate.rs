use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{create_dir, read_manifest, write_file};
use crate::aggregation::{OutageModel, StrategyRegistry};
use crate::error::{Error, Result};
use crate::fedcore::{
    communication_cost, run_federation, CollaboratorState, CommLedger, CostReport, FederationConfig, History,
    LocalPlan, ModelParams, DEFAULT_METADATA_BYTES, DEFAULT_WIRE_WIDTH,
};
use crate::reftrain::{generate_cases, DataSpec, ReferenceTrainer, Split, Trainer, TrainerParams, VoxelDataset};
use crate::volumes::{read_label_nifti, read_nifti, IntensityVolume, LabelVolume};

/// Where the collaborators' cases come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// A `manifest.csv` written by `gen-data`, relative to the config file.
    /// Images and labels are read from `images/` and `labels/` next to it.
    Manifest(PathBuf),
    /// Generated in memory from the run seed.
    Synthetic(DataSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub name: String,
    pub params: Value,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            name: "fedavg".into(),
            params: Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub name: String,
    pub params: TrainerParams,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            name: "reference".into(),
            params: TrainerParams::default(),
        }
    }
}

impl TrainerConfig {
    pub fn build(&self) -> Result<ReferenceTrainer> {
        if self.name != "reference" {
            return Err(Error::Config(format!(
                "unknown trainer {:?}; available trainers: reference",
                self.name
            )));
        }
        ReferenceTrainer::new(self.params.clone())
    }
}

fn default_rounds() -> usize {
    1
}

fn default_wire_width() -> u32 {
    DEFAULT_WIRE_WIDTH
}

fn default_metadata() -> u64 {
    DEFAULT_METADATA_BYTES
}

/// JSON config of `fets simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Required here or on the command line.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    pub data: DataSource,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub local: LocalPlan,
    #[serde(default)]
    pub outage: OutageModel,
    #[serde(default = "default_wire_width")]
    pub wire_width: u32,
    #[serde(default = "default_metadata")]
    pub metadata_bytes: u64,
}

impl SimulationConfig {
    pub fn federation(&self) -> Result<FederationConfig> {
        let seed = self
            .seed
            .ok_or_else(|| Error::Config("a seed is required (config field or --seed)".into()))?;
        let cfg = FederationConfig {
            rounds: self.rounds,
            seed,
            wire_width: self.wire_width,
            metadata_bytes: self.metadata_bytes,
            local: self.local,
            outage: self.outage.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Trained model plus what is needed to reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub trainer: TrainerConfig,
    pub strategy: String,
    pub seed: u64,
    pub rounds: usize,
    pub model: ModelParams,
}

impl ModelFile {
    pub fn params(&self) -> Result<ModelParams> {
        let expected = self.trainer.build()?.init_params(0).len();
        if self.model.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.model.len(),
            });
        }
        ModelParams::new(self.model.values().to_vec(), self.model.wire_width())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub model: ModelFile,
    pub ledger: CommLedger,
    pub history: History,
    pub cost: CostReport,
}

#[derive(Serialize)]
struct HistoryFile<'a> {
    history: &'a History,
    cost: &'a CostReport,
}

impl SimulationOutput {
    /// Writes `model.json`, `ledger.csv` and `history.json` into `out`.
    pub fn write(&self, out: &Path) -> Result<()> {
        create_dir(out)?;
        write_file(&out.join("model.json"), &serde_json::to_vec_pretty(&self.model)?)?;
        let mut ledger = Vec::new();
        self.ledger.write_csv(&mut ledger)?;
        write_file(&out.join("ledger.csv"), &ledger)?;
        let history = HistoryFile {
            history: &self.history,
            cost: &self.cost,
        };
        write_file(&out.join("history.json"), &serde_json::to_vec_pretty(&history)?)?;
        Ok(())
    }
}

struct InstitutionCases {
    id: String,
    train: Vec<(IntensityVolume, LabelVolume)>,
    val: Vec<(IntensityVolume, LabelVolume)>,
}

fn group_cases<I>(cases: I) -> Vec<InstitutionCases>
where
    I: IntoIterator<Item = (String, Split, IntensityVolume, LabelVolume)>,
{
    let mut order: Vec<InstitutionCases> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (inst, split, image, labels) in cases {
        let slot = *index.entry(inst.clone()).or_insert_with(|| {
            order.push(InstitutionCases {
                id: inst.clone(),
                train: Vec::new(),
                val: Vec::new(),
            });
            order.len() - 1
        });
        match split {
            Split::Train => order[slot].train.push((image, labels)),
            Split::Val => order[slot].val.push((image, labels)),
        }
    }
    order
}

fn load_cases(source: &DataSource, base: &Path, seed: u64) -> Result<Vec<InstitutionCases>> {
    match source {
        DataSource::Synthetic(spec) => Ok(group_cases(
            generate_cases(spec, seed)?
                .into_iter()
                .map(|c| (c.institution_id, c.split, c.image, c.labels)),
        )),
        DataSource::Manifest(rel) => {
            let path = base.join(rel);
            let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            let rows = read_manifest(&path)?;
            if rows.is_empty() {
                return Err(Error::Config(format!("{} lists no cases", path.display())));
            }
            let mut loaded = Vec::with_capacity(rows.len());
            for r in rows {
                let image = read_nifti(root.join("images").join(format!("{}.nii", r.case_id)))?;
                let labels = read_label_nifti(root.join("labels").join(format!("{}.nii", r.case_id)))?;
                loaded.push((r.institution_id, r.split, image, labels));
            }
            Ok(group_cases(loaded))
        }
    }
}

fn dataset(pairs: &[(IntensityVolume, LabelVolume)]) -> Result<VoxelDataset> {
    VoxelDataset::from_pairs(pairs.iter().map(|(i, l)| (i, l)))
}

/// Builds the collaborators and runs the federation on the ambient rayon
/// pool. Relative data paths resolve against `base`.
pub fn run_simulation(config: &SimulationConfig, base: &Path) -> Result<SimulationOutput> {
    let fed = config.federation()?;
    let registry = StrategyRegistry::with_defaults();
    let strategy = registry.build(&config.strategy.name, &config.strategy.params)?;
    let trainer = config.trainer.build()?;

    let institutions = load_cases(&config.data, base, fed.seed)?;
    let mut collaborators = Vec::with_capacity(institutions.len());
    for inst in &institutions {
        if inst.train.is_empty() {
            return Err(Error::Config(format!("institution {} has no training cases", inst.id)));
        }
        collaborators.push(CollaboratorState::new(
            inst.id.clone(),
            dataset(&inst.train)?,
            dataset(&inst.val)?,
            inst.train.len(),
        )?);
    }

    let outcome = run_federation(&fed, &collaborators, &trainer, strategy.as_ref())?;
    let cost = communication_cost(&outcome.ledger);
    Ok(SimulationOutput {
        model: ModelFile {
            trainer: config.trainer.clone(),
            strategy: config.strategy.name.clone(),
            seed: fed.seed,
            rounds: fed.rounds,
            model: outcome.final_model,
        },
        ledger: outcome.ledger,
        history: outcome.history,
        cost,
    })
}
