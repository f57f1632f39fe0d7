//! Offline and online stages wired together: synthesize data, train the toy
//! models, calibrate thresholds, run queries, evaluate.
//!
//! Every stage reads and writes the documents of the other modules, so each
//! one can run on its own. Attribute probabilities come from a trained
//! [`ToyModel`] when one is supplied and from the dataset's `attr_probs`
//! otherwise; retrieval embeddings likewise come from the model's embedder or
//! the raw feature.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{ThresholdGrid, ThresholdTable};
use crate::dataset::{load_dataset, write_dataset, Dataset, Descriptor, LoadedDataset, Split};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{attribute_f1, evaluate_retrieval, EvalReport, DEFAULT_CMC_RANKS};
use crate::models::{ToyModel, ToyModelConfig};
use crate::ontology::Ontology;
use crate::retrieval::{
    run_queries, FilterSpec, PreparedItem, RankOrder, RankingConfig, RankingDocument,
    RANKINGS_VERSION,
};
use crate::synth::{generate, scenario_confusable, ConfusableSpec, SynthConfig};

pub const REPORT_VERSION: u32 = 1;

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn check_model(model: Option<&ToyModel>, dataset: &Dataset) -> Result<()> {
    if let Some(m) = model {
        if m.ontology_checksum != dataset.ontology_checksum() {
            return Err(Error::ChecksumMismatch {
                context: "model".into(),
                expected: m.ontology_checksum.clone(),
                found: dataset.ontology_checksum().to_string(),
            });
        }
        if m.embedder.input_dim() != dataset.dim() && !dataset.is_empty() {
            return Err(Error::dims(
                "model input",
                m.embedder.input_dim(),
                dataset.dim(),
            ));
        }
    }
    Ok(())
}

fn check_thresholds(thresholds: &ThresholdTable, dataset: &Dataset) -> Result<()> {
    if thresholds.ontology_checksum != dataset.ontology_checksum() {
        return Err(Error::ChecksumMismatch {
            context: "threshold table".into(),
            expected: thresholds.ontology_checksum.clone(),
            found: dataset.ontology_checksum().to_string(),
        });
    }
    Ok(())
}

fn probability_source(model: Option<&ToyModel>) -> &'static str {
    if model.is_some() {
        "model"
    } else {
        "dataset"
    }
}

/// Attribute probabilities of `d`, from the model or the record itself.
pub fn attribute_probs(d: &Descriptor, model: Option<&ToyModel>) -> Result<Vec<f64>> {
    match model {
        Some(m) => m.attributes.predict(&d.feature),
        None => Ok(d.probs()?.to_vec()),
    }
}

/// Retrieval embedding of `d`, from the model's embedder or the raw feature.
pub fn embedding(d: &Descriptor, model: Option<&ToyModel>) -> Result<Vec<f64>> {
    match model {
        Some(m) => m.embedder.embed(&d.feature),
        None => Ok(d.feature.clone()),
    }
}

/// Probability and label matrices indexed `[attribute][sample]`.
pub type AttributeColumns = (Vec<Vec<f64>>, Vec<Vec<u8>>);

/// Column-major probabilities and labels over `descs`.
pub fn attribute_columns(
    descs: &[&Descriptor],
    num_attributes: usize,
    model: Option<&ToyModel>,
    exec: Execution,
) -> Result<AttributeColumns> {
    let rows = exec.try_map(descs, |d| {
        Ok::<_, Error>((attribute_probs(d, model)?, d.labels()?.to_vec()))
    })?;
    let mut probs = vec![Vec::with_capacity(descs.len()); num_attributes];
    let mut labels = vec![Vec::with_capacity(descs.len()); num_attributes];
    for (p, l) in rows {
        for j in 0..num_attributes {
            probs[j].push(p[j]);
            labels[j].push(l[j]);
        }
    }
    Ok((probs, labels))
}

/// Write a synthetic dataset (records, ontology, manifest) into `out_dir`.
pub fn gen_synth(
    cfg: &SynthConfig,
    ontology: &Ontology,
    confusable: Option<&ConfusableSpec>,
    out_dir: &Path,
) -> Result<PathBuf> {
    let dataset = match confusable {
        Some(spec) => scenario_confusable(cfg, ontology, spec)?,
        None => generate(cfg, ontology)?,
    };
    let provenance = serde_json::json!({ "config": cfg, "confusable": confusable });
    write_dataset(out_dir, ontology, &dataset, Some(provenance))
}

pub fn train_toy(
    loaded: &LoadedDataset,
    cfg: &ToyModelConfig,
    exec: Execution,
) -> Result<ToyModel> {
    let train = loaded.dataset.view(Split::Train);
    ToyModel::train(&train, &loaded.ontology, cfg, exec)
}

pub fn calibrate(
    loaded: &LoadedDataset,
    model: Option<&ToyModel>,
    split: Split,
    grid: &ThresholdGrid,
    exec: Execution,
) -> Result<ThresholdTable> {
    check_model(model, &loaded.dataset)?;
    let descs = loaded.dataset.view(split);
    if descs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "calibration split `{split}` is empty"
        )));
    }
    let (probs, labels) = attribute_columns(&descs, loaded.ontology.len(), model, exec)?;
    let mut table = ThresholdTable::calibrate(&loaded.ontology, &probs, &labels, grid, exec)?;
    table
        .provenance
        .insert("calibration_split".into(), split.to_string());
    table.provenance.insert(
        "probability_source".into(),
        probability_source(model).into(),
    );
    if let Some(m) = model {
        table
            .provenance
            .insert("model_checksum".into(), sha256_hex(&m.to_json()));
    }
    Ok(table)
}

pub fn prepare(
    descs: &[&Descriptor],
    model: Option<&ToyModel>,
    thresholds: &ThresholdTable,
    exec: Execution,
) -> Result<Vec<PreparedItem>> {
    exec.try_map(descs, |d| {
        PreparedItem::new(
            d,
            embedding(d, model)?,
            &attribute_probs(d, model)?,
            thresholds,
        )
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOptions {
    pub filter: FilterSpec,
    pub order: RankOrder,
    pub mask: bool,
    /// Restrict to these query ids; all query images when `None`.
    pub query_ids: Option<Vec<String>>,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            filter: FilterSpec::none(),
            order: RankOrder::FilterFirst,
            mask: true,
            query_ids: None,
        }
    }
}

pub fn run_query(
    loaded: &LoadedDataset,
    model: Option<&ToyModel>,
    thresholds: &ThresholdTable,
    opts: &QueryOptions,
    exec: Execution,
) -> Result<RankingDocument> {
    check_model(model, &loaded.dataset)?;
    check_thresholds(thresholds, &loaded.dataset)?;
    let resolved = opts.filter.resolve(&loaded.ontology)?;
    let mut queries = loaded.dataset.view(Split::Query);
    if let Some(ids) = &opts.query_ids {
        queries = ids
            .iter()
            .map(|id| {
                queries
                    .iter()
                    .find(|d| &d.image_id == id)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("`{id}` is not a query image")))
            })
            .collect::<Result<_>>()?;
    }
    let gallery = loaded.dataset.view(Split::Gallery);
    let queries = prepare(&queries, model, thresholds, exec)?;
    let gallery = prepare(&gallery, model, thresholds, exec)?;
    let results = run_queries(&queries, &gallery, &resolved, opts.order, opts.mask, exec)?;
    Ok(RankingDocument {
        schema_version: RANKINGS_VERSION,
        ontology_checksum: loaded.ontology.checksum(),
        config: RankingConfig {
            filter: opts.filter.to_string(),
            order: opts.order,
            mask: opts.mask,
            fallback_on_empty: opts.filter.fallback_on_empty,
            probability_source: probability_source(model).into(),
            thresholds_checksum: sha256_hex(&thresholds.to_json()),
        },
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub rankings: RankingConfig,
    pub mask: bool,
    pub cmc_ranks: Vec<usize>,
    pub attribute_splits: Vec<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<serde_json::Value>,
}

/// Evaluation report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDocument {
    pub schema_version: u32,
    pub ontology_checksum: String,
    pub config: EvalConfig,
    pub report: EvalReport,
}

impl EvalDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Score rankings and, when `thresholds` is given, per-attribute F1 over the
/// query and gallery images.
pub fn evaluate(
    loaded: &LoadedDataset,
    rankings: &RankingDocument,
    model: Option<&ToyModel>,
    thresholds: Option<&ThresholdTable>,
    mask: bool,
    exec: Execution,
) -> Result<EvalDocument> {
    if rankings.ontology_checksum != loaded.ontology.checksum() {
        return Err(Error::ChecksumMismatch {
            context: "rankings".into(),
            expected: rankings.ontology_checksum.clone(),
            found: loaded.ontology.checksum(),
        });
    }
    check_model(model, &loaded.dataset)?;
    let retrieval = evaluate_retrieval(
        &rankings.results,
        &loaded.dataset,
        mask,
        &DEFAULT_CMC_RANKS,
        exec,
    )?;

    let attribute_splits = vec![Split::Query, Split::Gallery];
    let (per_attr, avg) = match thresholds {
        Some(t) => {
            check_thresholds(t, &loaded.dataset)?;
            let descs: Vec<&Descriptor> = loaded
                .dataset
                .descriptors()
                .iter()
                .filter(|d| attribute_splits.contains(&d.split))
                .collect();
            let (probs, labels) = attribute_columns(&descs, loaded.ontology.len(), model, exec)?;
            let preds: Vec<Vec<u8>> = probs
                .iter()
                .zip(&t.entries)
                .map(|(col, e)| col.iter().map(|&p| u8::from(p >= e.threshold)).collect())
                .collect();
            attribute_f1(&loaded.ontology, &preds, &labels)?
        }
        None => (Vec::new(), 0.0),
    };

    Ok(EvalDocument {
        schema_version: REPORT_VERSION,
        ontology_checksum: loaded.ontology.checksum(),
        config: EvalConfig {
            rankings: rankings.config.clone(),
            mask,
            cmc_ranks: DEFAULT_CMC_RANKS.to_vec(),
            attribute_splits: if thresholds.is_some() {
                attribute_splits
            } else {
                Vec::new()
            },
            pipeline: None,
        },
        report: EvalReport::new(retrieval, per_attr, avg),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub confusable: Option<ConfusableSpec>,
    pub toy: ToyModelConfig,
    /// Use the trained toy model's probabilities and embeddings; otherwise
    /// the dataset's own `attr_probs` and raw features.
    pub use_model: bool,
    pub calibration_split: Split,
    #[serde(with = "filter_string")]
    pub filter: FilterSpec,
    pub order: RankOrder,
    pub mask: bool,
}

mod filter_string {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::retrieval::FilterSpec;

    pub fn serialize<S: Serializer>(f: &FilterSpec, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&f.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<FilterSpec, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl PipelineConfig {
    pub fn new(seed: u64) -> Self {
        let synth = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        PipelineConfig {
            synth,
            confusable: None,
            toy: ToyModelConfig::new(1.0, seed),
            use_model: true,
            calibration_split: Split::Train,
            filter: FilterSpec::none(),
            order: RankOrder::FilterFirst,
            mask: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: PathBuf,
    pub model: Option<PathBuf>,
    pub thresholds: PathBuf,
    pub rankings: PathBuf,
    pub report: PathBuf,
    pub document: EvalDocument,
}

/// gen-synth → train-toy → calibrate → query → evaluate, writing every
/// artifact into `out_dir`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    ontology: &Ontology,
    out_dir: &Path,
    exec: Execution,
) -> Result<PipelineOutcome> {
    let data_dir = out_dir.join("data");
    let manifest = gen_synth(&cfg.synth, ontology, cfg.confusable.as_ref(), &data_dir)?;
    let loaded = load_dataset(&manifest)?;

    let (model, model_path) = if cfg.use_model {
        let model = train_toy(&loaded, &cfg.toy, exec)?;
        let path = out_dir.join("model.json");
        write_text(&path, &model.to_json())?;
        (Some(model), Some(path))
    } else {
        (None, None)
    };

    let table = calibrate(
        &loaded,
        model.as_ref(),
        cfg.calibration_split,
        &ThresholdGrid::default(),
        exec,
    )?;
    let thresholds = out_dir.join("thresholds.json");
    write_text(&thresholds, &table.to_json())?;

    let opts = QueryOptions {
        filter: cfg.filter.clone(),
        order: cfg.order,
        mask: cfg.mask,
        query_ids: None,
    };
    let ranking_doc = run_query(&loaded, model.as_ref(), &table, &opts, exec)?;
    let rankings = out_dir.join("rankings.json");
    write_text(&rankings, &ranking_doc.to_json())?;

    let mut document = evaluate(
        &loaded,
        &ranking_doc,
        model.as_ref(),
        Some(&table),
        cfg.mask,
        exec,
    )?;
    document.config.pipeline = Some(serde_json::to_value(cfg)?);
    let report = out_dir.join("report.json");
    write_text(&report, &document.to_json())?;

    Ok(PipelineOutcome {
        manifest,
        model: model_path,
        thresholds,
        rankings,
        report,
        document,
    })
}

pub fn save(path: &Path, body: &str) -> Result<()> {
    write_text(path, body)
}
