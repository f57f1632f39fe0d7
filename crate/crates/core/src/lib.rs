//! Attribute-aware person re-identification at desk scale.
//!
//! The crate covers the whole retrieval loop:
//!
//! * [`ontology`]: regions → categories → binary attributes, and the
//!   region grouping that drives local models and filtering.
//! * [`dataset`]: descriptor records (identity, camera, split, feature,
//!   attribute probabilities and labels) and region slicing.
//! * [`models`]: triplet and averaged-BCE losses, a linear siamese
//!   embedder and region-local logistic attribute classifiers.
//! * [`calibration`]: MCC-maximizing per-attribute thresholds.
//! * [`retrieval`]: attribute pre-filtering plus exhaustive Euclidean
//!   ranking.
//! * [`metrics`]: CMC, mAP and F1.
//! * [`synth`]: seeded synthetic datasets.
//! * [`pipeline`]: the stages wired together over on-disk documents.
//!
//! The per-query and per-attribute loops run on rayon when the `parallel`
//! feature is enabled (the default); see [`Execution`].

pub mod calibration;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod models;
pub mod ontology;
pub mod pipeline;
pub mod retrieval;
pub mod synth;

pub use calibration::{binarize, mcc, ConfusionCounts, ThresholdGrid, ThresholdTable};
pub use dataset::{read_dataset, region_slice, split_views, Dataset, Descriptor, Split};
pub use error::{Error, Result};
pub use exec::Execution;
pub use metrics::{average_precision, cmc_at_k, f1, EvalReport};
pub use ontology::{load_ontology, AttributeDef, Ontology, Region};
pub use retrieval::{FilterSpec, QueryResult, RankOrder};
pub use synth::{generate, scenario_confusable, ConfusableSpec, SynthConfig};
