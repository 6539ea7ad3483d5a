//! The `fets` command line: data generation, federated simulation,
//! evaluation, prediction and ranking.
//!
//! Every command writes deterministic output for identical inputs. Errors map
//! to exit code 1 (invalid input or configuration) or 2 (runtime failure).

mod manifest;
mod simulate;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::metrics::{evaluate_case, EvaluationConfig, MetricKind};
use crate::ranking::{self, MetricRecord, RankReport};
use crate::reftrain::{generate_cases, DataSpec, Split};
use crate::volumes::{read_label_nifti, read_nifti, write_nifti, Region};

pub use manifest::{read_manifest, write_manifest, ManifestRow};
pub use simulate::{run_simulation, DataSource, ModelFile, SimulationConfig, SimulationOutput, StrategyConfig, TrainerConfig};

#[derive(Debug, Parser)]
#[command(name = "fets", version, about = "Federated tumor segmentation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic institutions as NIfTI image/label pairs.
    GenData(GenDataArgs),
    /// Run a federation and write the model, ledger and history.
    Simulate(SimulateArgs),
    /// Score predicted label volumes against ground truth.
    Evaluate(EvaluateArgs),
    /// Segment images with a trained model file.
    Predict(PredictArgs),
    /// Rank algorithms from metric CSVs.
    Rank(RankArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON data spec.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Output directory; receives `images/`, `labels/` and `manifest.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation config.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; receives `model.json`, `ledger.csv` and `history.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted `<case>.nii` label volumes.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth `<case>.nii` label volumes.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output directory; receives `metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest assigning cases to institutions. Without it every case in
    /// the ground-truth directory belongs to institution `default`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Restrict manifest cases to one split.
    #[arg(long, requires = "manifest")]
    pub split: Option<Split>,
    /// Algorithm name written to every row.
    #[arg(long, default_value = "algorithm")]
    pub algorithm: String,
    /// Optional JSON evaluation config (region mapping, HD95 settings).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model file written by `simulate`.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of `<case>.nii` images.
    #[arg(long)]
    pub images: PathBuf,
    /// Output directory for `<case>.nii` predictions.
    #[arg(long)]
    pub out: PathBuf,
    /// Predict only the cases listed here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Metric CSVs; together they must cover at least two algorithms.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    /// Output directory; receives `ranks.csv` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Rank(a) => cmd_rank(&a),
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?
            .install(f),
    }
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let spec: DataSpec = read_json(&args.config)?;
    let cases = generate_cases(&spec, args.seed)?;
    let images = args.out.join("images");
    let labels = args.out.join("labels");
    create_dir(&images)?;
    create_dir(&labels)?;
    let mut rows = Vec::with_capacity(cases.len());
    for c in &cases {
        write_nifti(&c.image, images.join(format!("{}.nii", c.case_id)))?;
        write_nifti(&c.labels, labels.join(format!("{}.nii", c.case_id)))?;
        rows.push(ManifestRow {
            case_id: c.case_id.clone(),
            institution_id: c.institution_id.clone(),
            split: c.split,
        });
    }
    write_manifest(&rows, &args.out.join("manifest.csv"))?;
    println!("wrote {} cases to {}", cases.len(), args.out.display());
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut config: SimulationConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let output = with_pool(args.jobs, || run_simulation(&config, base))?;
    output.write(&args.out)?;
    let cost = output.cost;
    println!(
        "rounds {} bytes_down {} bytes_up {} cumulative_bytes {}",
        cost.rounds, cost.bytes_down, cost.bytes_up, cost.cumulative_bytes
    );
    Ok(())
}

/// Case ids and institutions to process, from a manifest or a directory
/// listing.
fn case_list(manifest: Option<&Path>, split: Option<Split>, dir: &Path) -> Result<Vec<(String, String)>> {
    match manifest {
        Some(m) => Ok(read_manifest(m)?
            .into_iter()
            .filter(|r| split.is_none_or(|s| s == r.split))
            .map(|r| (r.case_id, r.institution_id))
            .collect()),
        None => {
            let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            let mut ids = Vec::new();
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(dir, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if let Some(id) = name.strip_suffix(".nii") {
                    ids.push((id.to_string(), "default".to_string()));
                }
            }
            ids.sort();
            Ok(ids)
        }
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let config: EvaluationConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => EvaluationConfig::default(),
    };
    config.regions.validate()?;
    let cases = case_list(args.manifest.as_deref(), args.split, &args.gt)?;
    if cases.is_empty() {
        return Err(Error::Config("no cases to evaluate".into()));
    }
    let per_case = with_pool(args.jobs, || {
        use rayon::prelude::*;
        cases
            .par_iter()
            .map(|(case, inst)| evaluate_one(args, &config, case, inst))
            .collect::<Result<Vec<_>>>()
    })?;
    let records: Vec<MetricRecord> = per_case.into_iter().flatten().collect();
    create_dir(&args.out)?;
    let path = args.out.join("metrics.csv");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    ranking::write_records_csv(&records, file)?;
    let missing = records.iter().filter(|r| r.is_missing()).count();
    println!("wrote {} rows ({} missing) to {}", records.len(), missing, path.display());
    Ok(())
}

fn evaluate_one(args: &EvaluateArgs, config: &EvaluationConfig, case: &str, inst: &str) -> Result<Vec<MetricRecord>> {
    let truth = read_label_nifti(args.gt.join(format!("{case}.nii")))?;
    let pred_path = args.pred.join(format!("{case}.nii"));
    let record = |region: Region, metric: MetricKind, value: Option<f64>| MetricRecord {
        algorithm: args.algorithm.clone(),
        institution: inst.to_string(),
        case: case.to_string(),
        region,
        metric,
        value,
    };
    if !pred_path.exists() {
        return Ok(Region::ALL
            .iter()
            .flat_map(|&r| MetricKind::ALL.map(|m| record(r, m, None)))
            .collect());
    }
    let pred = read_label_nifti(&pred_path)?;
    Ok(evaluate_case(&pred, &truth, config)?
        .into_iter()
        .map(|s| record(s.region, s.metric.kind, Some(s.metric.value)))
        .collect())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model: ModelFile = read_json(&args.model)?;
    let trainer = model.trainer.build()?;
    let params = model.params()?;
    let cases = case_list(args.manifest.as_deref(), args.split, &args.images)?;
    create_dir(&args.out)?;
    for (case, _) in &cases {
        let image = read_nifti(args.images.join(format!("{case}.nii")))?;
        let labels = crate::reftrain::Trainer::predict(&trainer, &params, &image);
        write_nifti(&labels, args.out.join(format!("{case}.nii")))?;
    }
    println!("wrote {} predictions to {}", cases.len(), args.out.display());
    Ok(())
}

pub fn cmd_rank(args: &RankArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.metrics {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        records.extend(ranking::read_records_csv(file)?);
    }
    let algorithms: BTreeMap<&str, ()> = records.iter().map(|r| (r.algorithm.as_str(), ())).collect();
    if algorithms.len() < 2 {
        return Err(Error::Ranking(format!(
            "ranking needs at least two algorithms, found {}",
            algorithms.len()
        )));
    }
    let table = ranking::rank_algorithms(&records)?;
    create_dir(&args.out)?;
    let csv_path = args.out.join("ranks.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    ranking::write_rank_csv(&table, file)?;
    let report = RankReport::build(&records, table);
    let json = serde_json::to_vec_pretty(&report)?;
    write_file(&args.out.join("report.json"), &json)?;
    for (alg, rank) in report.table.ordered() {
        println!("{rank}\t{alg}\t{}", report.table.mean_ranks[alg]);
    }
    Ok(())
}
