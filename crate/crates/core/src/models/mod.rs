//! Desk-scale linear stand-ins for the global embedding model and the
//! region-local attribute model, and the losses they are trained with.
//!
//! # Model document
//!
//! A trained model is saved as JSON with `schema_version`,
//! `ontology_checksum`, the training `config`, the `embedder`
//! (`input_dim`, `output_dim`, row-major `weights`) and the attribute
//! `groups` (region, attribute names, per-attribute `weights`/`bias`,
//! degenerate flags).

pub mod attributes;
pub mod embedder;
pub mod losses;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use attributes::{
    group_objective, predict_attr_probs, train_attribute_model, train_region_group,
    AttributeGroupConfig, AttributeModel, LogisticUnit, RegionClassifierGroup,
};
pub use embedder::{
    sample_triplets, train_embedder, train_embedder_from, triplet_accuracy, triplet_objective,
    EmbedderConfig, EmbedderTraining, LinearEmbedder, TripletIndex,
};
pub use losses::{
    avg_bce_logit_grad, avg_bce_loss, sigmoid, squared_distance, triplet_grad, triplet_loss,
    Triplet, TripletGrad, PROB_EPSILON,
};

use crate::dataset::Descriptor;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ontology::Ontology;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub embedder: EmbedderConfig,
    pub attributes: AttributeGroupConfig,
}

impl ToyModelConfig {
    pub fn new(margin: f64, seed: u64) -> Self {
        ToyModelConfig {
            embedder: EmbedderConfig::new(margin, seed),
            attributes: AttributeGroupConfig::default(),
        }
    }
}

/// Embedder plus attribute model, as trained together on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub ontology_checksum: String,
    pub config: ToyModelConfig,
    pub embedder: LinearEmbedder,
    pub attributes: AttributeModel,
    pub final_triplet_loss: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    schema_version: u32,
    ontology_checksum: String,
    config: ToyModelConfig,
    final_triplet_loss: f64,
    embedder: LinearEmbedder,
    groups: Vec<RegionClassifierGroup>,
}

impl ToyModel {
    pub fn train(
        train: &[&Descriptor],
        ontology: &Ontology,
        config: &ToyModelConfig,
        exec: Execution,
    ) -> Result<ToyModel> {
        let (embedder, report) = train_embedder(train, &config.embedder)?;
        let attributes = train_attribute_model(train, ontology, &config.attributes, exec)?;
        Ok(ToyModel {
            ontology_checksum: ontology.checksum(),
            config: config.clone(),
            embedder,
            attributes,
            final_triplet_loss: *report.loss_history.last().expect("initial loss recorded"),
        })
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            schema_version: MODEL_VERSION,
            ontology_checksum: self.ontology_checksum.clone(),
            config: self.config.clone(),
            final_triplet_loss: self.final_triplet_loss,
            embedder: self.embedder.clone(),
            groups: self.attributes.groups().to_vec(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
        s.push('\n');
        s
    }

    /// Parse a model document and check it was trained against `ontology`.
    pub fn from_json(text: &str, ontology: &Ontology) -> Result<ToyModel> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.schema_version != MODEL_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported model schema_version {}",
                doc.schema_version
            )));
        }
        let found = ontology.checksum();
        if doc.ontology_checksum != found {
            return Err(Error::ChecksumMismatch {
                context: "model".into(),
                expected: doc.ontology_checksum,
                found,
            });
        }
        let embedder = LinearEmbedder::from_weights(
            doc.embedder.input_dim(),
            doc.embedder.output_dim(),
            doc.embedder.weights().to_vec(),
        )?;
        Ok(ToyModel {
            ontology_checksum: doc.ontology_checksum,
            config: doc.config,
            embedder,
            attributes: AttributeModel::new(doc.groups, ontology)?,
            final_triplet_loss: doc.final_triplet_loss,
        })
    }

    pub fn load(path: impl AsRef<Path>, ontology: &Ontology) -> Result<ToyModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ToyModel::from_json(&text, ontology)
    }
}
