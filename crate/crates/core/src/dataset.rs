//! Descriptor records, dataset validation and split handling.
//!
//! # Records file
//!
//! One JSON object per line (UTF-8), with exactly these fields:
//!
//! ```json
//! {"image_id":"p0001_c0_i0","person_id":1,"camera_id":0,"split":"query",
//!  "feature":[0.25,-1.5,3.0,0.125],"attr_probs":[0.9,0.1],"attr_labels":[1,0]}
//! ```
//!
//! `attr_probs` and `attr_labels` may be omitted or `null`. Reals are written
//! in the shortest decimal form that parses back to the identical `f64`
//! (at most 17 significant digits), so a write/read cycle is bit exact.
//!
//! # Manifest
//!
//! A manifest (`manifest.json`) ties a records file to its ontology:
//! `schema_version`, `ontology` and `records` (paths relative to the manifest),
//! `ontology_checksum`, `dim`, `num_attributes`, and an optional
//! `synth_config` recording the generator configuration.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::{load_ontology_file, Ontology, Region};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

/// One image: identity, camera, split, embedding and optional attributes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptor {
    pub image_id: String,
    pub person_id: u32,
    pub camera_id: u32,
    pub split: Split,
    pub feature: Vec<f64>,
    pub attr_probs: Option<Vec<f64>>,
    pub attr_labels: Option<Vec<u8>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    image_id: String,
    person_id: u32,
    camera_id: u32,
    split: String,
    feature: Vec<f64>,
    #[serde(default)]
    attr_probs: Option<Vec<f64>>,
    #[serde(default)]
    attr_labels: Option<Vec<u8>>,
}

impl Descriptor {
    pub fn region_slice(&self, region: Region) -> Result<&[f64]> {
        region_slice(&self.feature, region)
    }

    pub fn labels(&self) -> Result<&[u8]> {
        self.attr_labels
            .as_deref()
            .ok_or_else(|| Error::MissingLabels(self.image_id.clone()))
    }

    pub fn probs(&self) -> Result<&[f64]> {
        self.attr_probs
            .as_deref()
            .ok_or_else(|| Error::MissingProbabilities(self.image_id.clone()))
    }
}

/// Index range of `region` within a feature of dimension `dim`.
///
/// The feature is cut into four equal quarters, top to bottom: head, upper,
/// lower, foot. `body` spans the upper and lower quarters.
pub fn region_range(dim: usize, region: Region) -> Result<std::ops::Range<usize>> {
    if !dim.is_multiple_of(4) {
        return Err(Error::IndivisibleDimension(dim));
    }
    let q = dim / 4;
    Ok(match region {
        Region::Head => 0..q,
        Region::Upper => q..2 * q,
        Region::Lower => 2 * q..3 * q,
        Region::Foot => 3 * q..dim,
        Region::Body => q..3 * q,
    })
}

pub fn region_slice(feature: &[f64], region: Region) -> Result<&[f64]> {
    Ok(&feature[region_range(feature.len(), region)?])
}

/// A validated collection of descriptors sharing one ontology.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ontology_checksum: String,
    num_attributes: usize,
    dim: usize,
    descriptors: Vec<Descriptor>,
}

impl Dataset {
    /// Validate `descriptors` against `ontology`.
    ///
    /// The feature dimension comes from the first descriptor; an empty dataset
    /// has dimension 0.
    pub fn new(descriptors: Vec<Descriptor>, ontology: &Ontology) -> Result<Dataset> {
        let m = ontology.len();
        let dim = descriptors.first().map_or(0, |d| d.feature.len());
        if !dim.is_multiple_of(4) {
            return Err(Error::IndivisibleDimension(dim));
        }
        let mut seen = HashSet::with_capacity(descriptors.len());
        for d in &descriptors {
            if !seen.insert(d.image_id.as_str()) {
                return Err(Error::DuplicateImageId(d.image_id.clone()));
            }
            if d.feature.len() != dim {
                return Err(Error::dims(
                    format!("feature of `{}`", d.image_id),
                    dim,
                    d.feature.len(),
                ));
            }
            if let Some(i) = d.feature.iter().position(|x| !x.is_finite()) {
                return Err(Error::Malformed(format!(
                    "non-finite feature component {i} in `{}`",
                    d.image_id
                )));
            }
            if let Some(probs) = &d.attr_probs {
                if probs.len() != m {
                    return Err(Error::dims(
                        format!("attr_probs of `{}`", d.image_id),
                        m,
                        probs.len(),
                    ));
                }
                if let Some((index, &value)) = probs
                    .iter()
                    .enumerate()
                    .find(|(_, p)| !(0.0..=1.0).contains(*p))
                {
                    return Err(Error::ProbabilityRange {
                        image_id: d.image_id.clone(),
                        index,
                        value,
                    });
                }
            }
            if let Some(labels) = &d.attr_labels {
                if labels.len() != m {
                    return Err(Error::dims(
                        format!("attr_labels of `{}`", d.image_id),
                        m,
                        labels.len(),
                    ));
                }
                if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
                    return Err(Error::InvalidLabel {
                        image_id: d.image_id.clone(),
                        index,
                        value,
                    });
                }
            }
        }
        Ok(Dataset {
            ontology_checksum: ontology.checksum(),
            num_attributes: m,
            dim,
            descriptors,
        })
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn ontology_checksum(&self) -> &str {
        &self.ontology_checksum
    }

    pub fn get(&self, image_id: &str) -> Option<&Descriptor> {
        self.descriptors.iter().find(|d| d.image_id == image_id)
    }

    pub fn split_views(&self) -> SplitViews<'_> {
        split_views(self)
    }

    pub fn view(&self, split: Split) -> Vec<&Descriptor> {
        self.descriptors
            .iter()
            .filter(|d| d.split == split)
            .collect()
    }

    /// Serialize to the records format, one line per descriptor.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for d in &self.descriptors {
            out.push_str(&serde_json::to_string(d).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

/// Train / query / gallery partition of a dataset, in record order.
#[derive(Debug, Clone, Default)]
pub struct SplitViews<'a> {
    pub train: Vec<&'a Descriptor>,
    pub query: Vec<&'a Descriptor>,
    pub gallery: Vec<&'a Descriptor>,
}

impl SplitViews<'_> {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.query.len(), self.gallery.len())
    }
}

pub fn split_views(ds: &Dataset) -> SplitViews<'_> {
    let mut views = SplitViews::default();
    for d in ds.descriptors() {
        match d.split {
            Split::Train => views.train.push(d),
            Split::Query => views.query.push(d),
            Split::Gallery => views.gallery.push(d),
        }
    }
    views
}

/// Parse a records file and validate it against `ontology`.
pub fn read_dataset(records: &str, ontology: &Ontology) -> Result<Dataset> {
    let mut descriptors = Vec::new();
    for (lineno, line) in records.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| Error::Malformed(format!("record on line {}: {e}", lineno + 1)))?;
        descriptors.push(Descriptor {
            split: raw.split.parse()?,
            image_id: raw.image_id,
            person_id: raw.person_id,
            camera_id: raw.camera_id,
            feature: raw.feature,
            attr_probs: raw.attr_probs,
            attr_labels: raw.attr_labels,
        });
    }
    Dataset::new(descriptors, ontology)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub ontology: String,
    pub ontology_checksum: String,
    pub records: String,
    pub dim: usize,
    pub num_attributes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth_config: Option<serde_json::Value>,
}

/// A dataset together with the ontology and manifest it was loaded from.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub ontology: Ontology,
    pub dataset: Dataset,
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.schema_version != MANIFEST_VERSION {
        return Err(Error::Malformed(format!(
            "unsupported manifest schema_version {}",
            manifest.schema_version
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let ontology = load_ontology_file(resolve(base, &manifest.ontology))?;
    let found = ontology.checksum();
    if found != manifest.ontology_checksum {
        return Err(Error::ChecksumMismatch {
            context: "dataset manifest".into(),
            expected: manifest.ontology_checksum.clone(),
            found,
        });
    }
    let records_path = resolve(base, &manifest.records);
    let records =
        std::fs::read_to_string(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let dataset = read_dataset(&records, &ontology)?;
    if !dataset.is_empty() && dataset.dim() != manifest.dim {
        return Err(Error::dims("manifest dim", manifest.dim, dataset.dim()));
    }
    if dataset.num_attributes() != manifest.num_attributes {
        return Err(Error::dims(
            "manifest num_attributes",
            manifest.num_attributes,
            dataset.num_attributes(),
        ));
    }
    Ok(LoadedDataset {
        manifest,
        ontology,
        dataset,
    })
}

/// Write `ontology.json`, `descriptors.jsonl` and `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    ontology: &Ontology,
    dataset: &Dataset,
    synth_config: Option<serde_json::Value>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: &str| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    write("ontology.json", &ontology.to_json())?;
    write("descriptors.jsonl", &dataset.to_records())?;
    let manifest = Manifest {
        schema_version: MANIFEST_VERSION,
        ontology: "ontology.json".into(),
        ontology_checksum: ontology.checksum(),
        records: "descriptors.jsonl".into(),
        dim: dataset.dim(),
        num_attributes: dataset.num_attributes(),
        synth_config,
    };
    let mut body = serde_json::to_string_pretty(&manifest)?;
    body.push('\n');
    write("manifest.json", &body)?;
    Ok(dir.join("manifest.json"))
}
