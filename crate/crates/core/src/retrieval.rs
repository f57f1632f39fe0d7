//! Two-stage gallery search: attribute pre-filtering and exhaustive
//! Euclidean ranking.
//!
//! A gallery item survives the filter when its binarized value equals the
//! query's on every attribute the [`FilterSpec`] names. Survivors are sorted
//! by ascending Euclidean distance, ties broken by `image_id`. The two stages
//! may run in either order; the output is identical.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::ThresholdTable;
use crate::dataset::Descriptor;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ontology::{Ontology, Region};

pub const RANKINGS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterMode {
    None,
    Single(String),
    /// Conjunctive: every listed attribute must match.
    Set(Vec<String>),
    AllOfRegion(Region),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSpec {
    pub mode: FilterMode,
    pub fallback_on_empty: bool,
}

impl FilterSpec {
    pub fn none() -> Self {
        FilterSpec {
            mode: FilterMode::None,
            fallback_on_empty: true,
        }
    }

    pub fn single(name: impl Into<String>) -> Self {
        FilterSpec {
            mode: FilterMode::Single(name.into()),
            fallback_on_empty: true,
        }
    }

    pub fn set<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        FilterSpec {
            mode: FilterMode::Set(names.into_iter().map(Into::into).collect()),
            fallback_on_empty: true,
        }
    }

    pub fn region(region: Region) -> Self {
        FilterSpec {
            mode: FilterMode::AllOfRegion(region),
            fallback_on_empty: true,
        }
    }

    pub fn without_fallback(mut self) -> Self {
        self.fallback_on_empty = false;
        self
    }

    /// Canonical attribute indices the filter compares.
    pub fn resolve(&self, ontology: &Ontology) -> Result<ResolvedFilter> {
        let indices = match &self.mode {
            FilterMode::None => Vec::new(),
            FilterMode::Single(name) => vec![ontology.index_of(name)?],
            FilterMode::Set(names) => {
                if names.is_empty() {
                    return Err(Error::InvalidArgument("empty attribute set".into()));
                }
                let mut idx = names
                    .iter()
                    .map(|n| ontology.index_of(n))
                    .collect::<Result<Vec<_>>>()?;
                idx.sort_unstable();
                idx.dedup();
                idx
            }
            FilterMode::AllOfRegion(r) => ontology.indices_of_region(*r),
        };
        Ok(ResolvedFilter {
            indices,
            fallback_on_empty: self.fallback_on_empty,
        })
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.mode {
            FilterMode::None => f.write_str("none"),
            FilterMode::Single(n) => write!(f, "attr:{n}"),
            FilterMode::Set(ns) => write!(f, "attrs:{}", ns.join(",")),
            FilterMode::AllOfRegion(r) => write!(f, "region:{r}"),
        }
    }
}

impl FromStr for FilterSpec {
    type Err = Error;

    /// `none`, `attr:NAME`, `attrs:N1,N2,...` or `region:R`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(FilterSpec::none());
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("unrecognised filter `{s}`")))?;
        match kind {
            "attr" if !rest.trim().is_empty() => Ok(FilterSpec::single(rest.trim())),
            "attrs" => {
                let names: Vec<&str> = rest
                    .split(',')
                    .map(str::trim)
                    .filter(|n| !n.is_empty())
                    .collect();
                if names.is_empty() {
                    return Err(Error::InvalidArgument("empty attribute set".into()));
                }
                Ok(FilterSpec::set(names))
            }
            "region" => Ok(FilterSpec::region(rest.trim().parse()?)),
            _ => Err(Error::InvalidArgument(format!("unrecognised filter `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedFilter {
    pub indices: Vec<usize>,
    pub fallback_on_empty: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankOrder {
    #[default]
    FilterFirst,
    RankFirst,
}

impl fmt::Display for RankOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankOrder::FilterFirst => "filter-first",
            RankOrder::RankFirst => "rank-first",
        })
    }
}

impl FromStr for RankOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter-first" => Ok(RankOrder::FilterFirst),
            "rank-first" => Ok(RankOrder::RankFirst),
            other => Err(Error::InvalidArgument(format!("unknown order `{other}`"))),
        }
    }
}

/// A query or gallery image ready for search: its retrieval embedding and
/// its attributes binarized with the calibrated thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedItem {
    pub image_id: String,
    pub person_id: u32,
    pub camera_id: u32,
    pub embedding: Vec<f64>,
    pub attrs: Vec<u8>,
}

impl PreparedItem {
    pub fn new(
        d: &Descriptor,
        embedding: Vec<f64>,
        probs: &[f64],
        thresholds: &ThresholdTable,
    ) -> Result<Self> {
        Ok(PreparedItem {
            image_id: d.image_id.clone(),
            person_id: d.person_id,
            camera_id: d.camera_id,
            embedding,
            attrs: thresholds.binarize_vector(probs)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub image_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub ranked: Vec<RankedItem>,
    /// Admissible gallery items removed by the attribute filter.
    pub removed_count: usize,
    pub fallback_used: bool,
    /// Gallery items excluded by the protocol mask.
    pub masked_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterOutcome {
    /// Positions into the candidate slice, in input order.
    pub survivors: Vec<usize>,
    pub fallback_used: bool,
}

fn matches(query_attrs: &[u8], item: &PreparedItem, indices: &[usize]) -> bool {
    indices.iter().all(|&j| item.attrs[j] == query_attrs[j])
}

fn check_attrs(len: usize, items: &[&PreparedItem], filter: &ResolvedFilter) -> Result<()> {
    if let Some(&j) = filter.indices.iter().find(|&&j| j >= len) {
        return Err(Error::InvalidArgument(format!(
            "attribute index {j} out of range"
        )));
    }
    if let Some(item) = items.iter().find(|g| g.attrs.len() != len) {
        return Err(Error::dims(
            format!("attributes of `{}`", item.image_id),
            len,
            item.attrs.len(),
        ));
    }
    Ok(())
}

pub fn attribute_filter(
    query_attrs: &[u8],
    gallery: &[&PreparedItem],
    filter: &ResolvedFilter,
) -> Result<FilterOutcome> {
    check_attrs(query_attrs.len(), gallery, filter)?;
    let survivors: Vec<usize> = (0..gallery.len())
        .filter(|&i| matches(query_attrs, gallery[i], &filter.indices))
        .collect();
    if survivors.is_empty() && filter.fallback_on_empty && !gallery.is_empty() {
        return Ok(FilterOutcome {
            survivors: (0..gallery.len()).collect(),
            fallback_used: true,
        });
    }
    Ok(FilterOutcome {
        survivors,
        fallback_used: false,
    })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn ranking_order(a: &RankedItem, b: &RankedItem) -> std::cmp::Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// Exhaustive ranking by ascending Euclidean distance, ties by `image_id`.
pub fn rank_by_distance(
    query_feature: &[f64],
    candidates: &[&PreparedItem],
) -> Result<Vec<RankedItem>> {
    let mut ranked = candidates
        .iter()
        .map(|c| {
            if c.embedding.len() != query_feature.len() {
                return Err(Error::dims(
                    format!("embedding of `{}`", c.image_id),
                    query_feature.len(),
                    c.embedding.len(),
                ));
            }
            Ok(RankedItem {
                image_id: c.image_id.clone(),
                distance: euclidean(query_feature, &c.embedding),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(ranking_order);
    Ok(ranked)
}

/// Gallery items admissible for `q`: everything except images of the same
/// person taken by the same camera, unless the mask is disabled.
pub fn protocol_mask<'a>(
    q: &PreparedItem,
    gallery: &'a [PreparedItem],
    enabled: bool,
) -> Vec<&'a PreparedItem> {
    gallery
        .iter()
        .filter(|g| !enabled || !(g.person_id == q.person_id && g.camera_id == q.camera_id))
        .collect()
}

pub fn query(
    q: &PreparedItem,
    gallery: &[PreparedItem],
    filter: &ResolvedFilter,
    order: RankOrder,
    mask: bool,
) -> Result<QueryResult> {
    let admissible = protocol_mask(q, gallery, mask);
    let masked_count = gallery.len() - admissible.len();
    check_attrs(q.attrs.len(), &admissible, filter)?;

    let (ranked, removed_count, fallback_used) = match order {
        RankOrder::FilterFirst => {
            let outcome = attribute_filter(&q.attrs, &admissible, filter)?;
            let survivors: Vec<&PreparedItem> =
                outcome.survivors.iter().map(|&i| admissible[i]).collect();
            let removed = if outcome.fallback_used {
                0
            } else {
                admissible.len() - survivors.len()
            };
            (
                rank_by_distance(&q.embedding, &survivors)?,
                removed,
                outcome.fallback_used,
            )
        }
        RankOrder::RankFirst => {
            let ranked = rank_by_distance(&q.embedding, &admissible)?;
            let by_id: std::collections::HashMap<&str, &PreparedItem> = admissible
                .iter()
                .map(|g| (g.image_id.as_str(), *g))
                .collect();
            let kept: Vec<RankedItem> = ranked
                .iter()
                .filter(|r| matches(&q.attrs, by_id[r.image_id.as_str()], &filter.indices))
                .cloned()
                .collect();
            if kept.is_empty() && filter.fallback_on_empty && !ranked.is_empty() {
                (ranked, 0, true)
            } else {
                let removed = ranked.len() - kept.len();
                (kept, removed, false)
            }
        }
    };

    Ok(QueryResult {
        query_id: q.image_id.clone(),
        ranked,
        removed_count,
        fallback_used,
        masked_count,
    })
}

/// Run every query against the same gallery. Queries are independent and
/// run concurrently under [`Execution::Parallel`]; results keep query order.
pub fn run_queries(
    queries: &[PreparedItem],
    gallery: &[PreparedItem],
    filter: &ResolvedFilter,
    order: RankOrder,
    mask: bool,
    exec: Execution,
) -> Result<Vec<QueryResult>> {
    exec.try_map(queries, |q| query(q, gallery, filter, order, mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub filter: String,
    pub order: RankOrder,
    pub mask: bool,
    pub fallback_on_empty: bool,
    pub probability_source: String,
    pub thresholds_checksum: String,
}

/// Query batch output: one ranking per query plus the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingDocument {
    pub schema_version: u32,
    pub ontology_checksum: String,
    pub config: RankingConfig,
    pub results: Vec<QueryResult>,
}

impl RankingDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RankingDocument = serde_json::from_str(text)?;
        if doc.schema_version != RANKINGS_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported rankings schema_version {}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
