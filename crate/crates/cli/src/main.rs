//! `pao-reid`: offline (gen-synth, train-toy, calibrate) and online
//! (query, evaluate) stages of the attribute-aware re-identification
//! pipeline.
//!
//! Exit status: 0 on success, 1 on validation failure, 2 on I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pao_reid::calibration::{ThresholdGrid, ThresholdTable};
use pao_reid::dataset::{load_dataset, LoadedDataset};
use pao_reid::models::{ToyModel, ToyModelConfig};
use pao_reid::ontology::load_ontology_file;
use pao_reid::pipeline::{self, PipelineConfig, QueryOptions};
use pao_reid::retrieval::{FilterSpec, RankOrder, RankingDocument};
use pao_reid::synth::{ConfusableSpec, SynthConfig};
use pao_reid::{Error, Execution, Ontology, Result, Split};

#[derive(Parser, Debug)]
#[command(
    name = "pao-reid",
    version,
    about = "Attribute-aware person re-identification pipeline"
)]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic dataset.
    GenSynth(GenSynthArgs),
    /// Train the linear embedder and region attribute classifiers.
    TrainToy(TrainToyArgs),
    /// Choose MCC-maximizing per-attribute thresholds.
    Calibrate(CalibrateArgs),
    /// Rank the gallery for every query image.
    Query(QueryArgs),
    /// Score rankings (CMC, mAP) and attribute predictions (F1).
    Evaluate(EvaluateArgs),
    /// Run gen-synth → train-toy → calibrate → query → evaluate.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mask {
    On,
    Off,
}

impl From<Mask> for bool {
    fn from(m: Mask) -> bool {
        matches!(m, Mask::On)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Query,
    Gallery,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Query => Split::Query,
            SplitArg::Gallery => Split::Gallery,
        }
    }
}

#[derive(Args, Debug)]
struct ConfusableArgs {
    /// Build look-alike identity pairs that differ only on this attribute.
    #[arg(long, value_name = "ATTRIBUTE")]
    confusable: Option<String>,
    /// Centroid distance within a look-alike pair.
    #[arg(long, default_value_t = 0.0, requires = "confusable")]
    pair_gap: f64,
}

impl ConfusableArgs {
    fn spec(&self) -> Option<ConfusableSpec> {
        self.confusable.as_ref().map(|attribute| ConfusableSpec {
            attribute: attribute.clone(),
            pair_gap: self.pair_gap,
        })
    }
}

#[derive(Args, Debug)]
struct GenSynthArgs {
    /// Ontology document; the bundled Market1501 ontology by default.
    #[arg(long)]
    ontology: Option<PathBuf>,
    /// Generator configuration (JSON); built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    confusable: ConfusableArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainToyArgs {
    /// Dataset manifest.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Predict probabilities with this model instead of using the records'.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    thresholds: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// `none`, `attr:NAME`, `attrs:N1,N2`, or `region:R`.
    #[arg(long, default_value = "none")]
    filter: String,
    /// Return the full gallery ranking when no candidate survives.
    #[arg(long, value_enum, default_value = "on")]
    fallback: Mask,
    #[arg(long, default_value = "filter-first")]
    order: String,
    #[arg(long, value_enum, default_value = "on")]
    mask: Mask,
    /// File with one query image id per line; all queries by default.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    rankings: PathBuf,
    /// Also report per-attribute F1 with these thresholds.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    mask: Mask,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    ontology: Option<PathBuf>,
    /// Full pipeline configuration (JSON); built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    order: Option<String>,
    #[arg(long, value_enum)]
    mask: Option<Mask>,
    /// Use the records' probabilities and raw features instead of training
    /// toy models.
    #[arg(long)]
    no_model: bool,
    #[command(flatten)]
    confusable: ConfusableArgs,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn ontology_arg(path: &Option<PathBuf>) -> Result<Ontology> {
    match path {
        Some(p) => load_ontology_file(p),
        None => Ok(Ontology::market1501()),
    }
}

fn model_arg(path: &Option<PathBuf>, loaded: &LoadedDataset) -> Result<Option<ToyModel>> {
    path.as_ref()
        .map(|p| ToyModel::load(p, &loaded.ontology))
        .transpose()
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::GenSynth(a) => {
            let ontology = ontology_arg(&a.ontology)?;
            let mut cfg: SynthConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let manifest =
                pipeline::gen_synth(&cfg, &ontology, a.confusable.spec().as_ref(), &a.out)?;
            println!("{}", manifest.display());
        }
        Command::TrainToy(a) => {
            let loaded = load_dataset(&a.dataset)?;
            let mut cfg = ToyModelConfig::new(a.margin, a.seed);
            if let Some(epochs) = a.epochs {
                cfg.embedder.max_epochs = epochs;
            }
            let model = pipeline::train_toy(&loaded, &cfg, exec)?;
            pipeline::save(&a.out, &model.to_json())?;
            println!("final triplet loss {:.6}", model.final_triplet_loss);
        }
        Command::Calibrate(a) => {
            let loaded = load_dataset(&a.dataset)?;
            let model = model_arg(&a.model, &loaded)?;
            let table = pipeline::calibrate(
                &loaded,
                model.as_ref(),
                a.split.into(),
                &ThresholdGrid::default(),
                exec,
            )?;
            pipeline::save(&a.out, &table.to_json())?;
            for e in &table.entries {
                println!(
                    "{:<16} threshold {:.2}  mcc {:.4}",
                    e.attribute, e.threshold, e.mcc
                );
            }
        }
        Command::Query(a) => {
            let loaded = load_dataset(&a.dataset)?;
            let model = model_arg(&a.model, &loaded)?;
            let thresholds = ThresholdTable::load(&a.thresholds, &loaded.ontology)?;
            let mut filter: FilterSpec = a.filter.parse()?;
            filter.fallback_on_empty = a.fallback.into();
            let query_ids = match &a.queries {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    Some(
                        text.lines()
                            .map(str::trim)
                            .filter(|l| !l.is_empty())
                            .map(String::from)
                            .collect(),
                    )
                }
                None => None,
            };
            let opts = QueryOptions {
                filter,
                order: a.order.parse::<RankOrder>()?,
                mask: a.mask.into(),
                query_ids,
            };
            let doc = pipeline::run_query(&loaded, model.as_ref(), &thresholds, &opts, exec)?;
            pipeline::save(&a.out, &doc.to_json())?;
            println!("{} queries ranked", doc.results.len());
        }
        Command::Evaluate(a) => {
            let loaded = load_dataset(&a.dataset)?;
            let model = model_arg(&a.model, &loaded)?;
            let rankings = RankingDocument::load(&a.rankings)?;
            let thresholds = a
                .thresholds
                .as_ref()
                .map(|p| ThresholdTable::load(p, &loaded.ontology))
                .transpose()?;
            let doc = pipeline::evaluate(
                &loaded,
                &rankings,
                model.as_ref(),
                thresholds.as_ref(),
                a.mask.into(),
                exec,
            )?;
            pipeline::save(&a.out, &doc.to_json())?;
            print_report(&doc.report);
        }
        Command::Pipeline(a) => {
            let ontology = ontology_arg(&a.ontology)?;
            let mut cfg: PipelineConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => PipelineConfig::new(a.seed.unwrap_or(1501)),
            };
            if let Some(seed) = a.seed {
                cfg.synth.seed = seed;
                cfg.toy.embedder.seed = seed;
            }
            if let Some(f) = &a.filter {
                cfg.filter = f.parse()?;
            }
            if let Some(o) = &a.order {
                cfg.order = o.parse()?;
            }
            if let Some(m) = a.mask {
                cfg.mask = m.into();
            }
            if a.no_model {
                cfg.use_model = false;
            }
            if let Some(spec) = a.confusable.spec() {
                cfg.confusable = Some(spec);
            }
            let outcome = pipeline::run_pipeline(&cfg, &ontology, &a.out, exec)?;
            print_report(&outcome.document.report);
            println!("report written to {}", outcome.report.display());
        }
    }
    Ok(())
}

fn print_report(report: &pao_reid::EvalReport) {
    for (k, v) in &report.cmc {
        println!("top-{k:<3} {:.4}", v);
    }
    println!("mAP     {:.4}", report.map_score);
    if !report.per_attr_f1.is_empty() {
        println!("avg F1  {:.4}", report.avg_f1);
    }
    if !report.skipped_queries.is_empty() {
        eprintln!(
            "warning: {} queries without admissible relevant gallery images were skipped",
            report.skipped_queries.len()
        );
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
