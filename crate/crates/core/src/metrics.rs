//! Retrieval metrics (CMC top-k, mAP) and attribute metrics (F1).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Descriptor, Split};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ontology::Ontology;
use crate::retrieval::QueryResult;

pub const DEFAULT_CMC_RANKS: [usize; 3] = [1, 5, 10];

/// Non-interpolated average precision:
/// `(1/R) Σ_k precision@k · rel(k)` over the ranked list.
pub fn average_precision(ranked_relevance: &[bool], total_relevant: usize) -> Result<f64> {
    if total_relevant == 0 {
        return Err(Error::InvalidArgument("total_relevant must be > 0".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits > total_relevant {
        return Err(Error::InvalidArgument(format!(
            "{hits} relevant items ranked but total_relevant is {total_relevant}"
        )));
    }
    Ok(sum / total_relevant as f64)
}

/// Fraction of queries with a relevant item within the first `k`.
/// Zero queries score 0.
pub fn cmc_at_k(rankings: &[Vec<bool>], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let hits = rankings
        .iter()
        .filter(|r| r.iter().take(k).any(|&rel| rel))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// `2TP / (2TP + FP + FN)`; 0 when the denominator is 0.
pub fn f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::dims("f1 labels", preds.len(), labels.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeF1 {
    pub attribute: String,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rank k → CMC accuracy.
    pub cmc: BTreeMap<usize, f64>,
    pub map_score: f64,
    pub num_queries: usize,
    /// Queries with no admissible relevant gallery item, excluded.
    pub skipped_queries: Vec<String>,
    pub per_attr_f1: Vec<AttributeF1>,
    pub avg_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalScores {
    pub cmc: BTreeMap<usize, f64>,
    pub map_score: f64,
    pub num_queries: usize,
    pub skipped_queries: Vec<String>,
}

/// Relevance sequence and relevant-item count of one query, or `None` when
/// the query has no admissible relevant gallery item.
fn judge(
    result: &QueryResult,
    query: &Descriptor,
    gallery: &[&Descriptor],
    lookup: &HashMap<&str, &Descriptor>,
    mask: bool,
) -> Result<Option<(Vec<bool>, usize)>> {
    let admissible = |g: &Descriptor| {
        !(mask && g.person_id == query.person_id && g.camera_id == query.camera_id)
    };
    let total = gallery
        .iter()
        .filter(|g| g.person_id == query.person_id && admissible(g))
        .count();
    if total == 0 {
        return Ok(None);
    }
    let mut relevance = Vec::with_capacity(result.ranked.len());
    for r in &result.ranked {
        let g = lookup.get(r.image_id.as_str()).ok_or_else(|| {
            Error::InvalidArgument(format!("ranked id `{}` is not a gallery image", r.image_id))
        })?;
        if admissible(g) {
            relevance.push(g.person_id == query.person_id);
        }
    }
    Ok(Some((relevance, total)))
}

/// Score a batch of query results against the dataset's identities.
///
/// Relevant items are gallery images of the query's person; with `mask` on,
/// gallery images sharing both person and camera with the query are ignored.
pub fn evaluate_retrieval(
    results: &[QueryResult],
    dataset: &Dataset,
    mask: bool,
    ranks: &[usize],
    exec: Execution,
) -> Result<RetrievalScores> {
    let gallery = dataset.view(Split::Gallery);
    let lookup: HashMap<&str, &Descriptor> =
        gallery.iter().map(|d| (d.image_id.as_str(), *d)).collect();
    let all: HashMap<&str, &Descriptor> = dataset
        .descriptors()
        .iter()
        .map(|d| (d.image_id.as_str(), d))
        .collect();

    let judged = exec.try_map(results, |r| {
        let q = all
            .get(r.query_id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown query id `{}`", r.query_id)))?;
        judge(r, q, &gallery, &lookup, mask)
    })?;

    let mut skipped = Vec::new();
    let mut rankings = Vec::new();
    let mut ap_sum = 0.0;
    for (r, j) in results.iter().zip(judged) {
        match j {
            None => skipped.push(r.query_id.clone()),
            Some((relevance, total)) => {
                ap_sum += average_precision(&relevance, total)?;
                rankings.push(relevance);
            }
        }
    }
    let mut cmc = BTreeMap::new();
    for &k in ranks {
        cmc.insert(k, cmc_at_k(&rankings, k)?);
    }
    let n = rankings.len();
    Ok(RetrievalScores {
        cmc,
        map_score: if n == 0 { 0.0 } else { ap_sum / n as f64 },
        num_queries: n,
        skipped_queries: skipped,
    })
}

/// Per-attribute F1 in canonical order and their arithmetic mean.
pub fn attribute_f1(
    ontology: &Ontology,
    preds_per_attr: &[Vec<u8>],
    labels_per_attr: &[Vec<u8>],
) -> Result<(Vec<AttributeF1>, f64)> {
    let m = ontology.len();
    if preds_per_attr.len() != m || labels_per_attr.len() != m {
        return Err(Error::dims(
            "attribute count",
            m,
            preds_per_attr.len().min(labels_per_attr.len()),
        ));
    }
    let per = ontology
        .attribute_names()
        .zip(preds_per_attr.iter().zip(labels_per_attr))
        .map(|(name, (p, l))| {
            Ok(AttributeF1 {
                attribute: name.to_string(),
                f1: f1(p, l)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let avg = if per.is_empty() {
        0.0
    } else {
        per.iter().map(|a| a.f1).sum::<f64>() / per.len() as f64
    };
    Ok((per, avg))
}

impl EvalReport {
    pub fn new(retrieval: RetrievalScores, per_attr_f1: Vec<AttributeF1>, avg_f1: f64) -> Self {
        EvalReport {
            cmc: retrieval.cmc,
            map_score: retrieval.map_score,
            num_queries: retrieval.num_queries,
            skipped_queries: retrieval.skipped_queries,
            per_attr_f1,
            avg_f1,
        }
    }

    pub fn top_k(&self, k: usize) -> Option<f64> {
        self.cmc.get(&k).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[true, false, true], 2).unwrap();
        assert!((ap - 0.833333).abs() < 1e-6);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&[true, true, false], 2).unwrap(), 1.0);
        assert_eq!(average_precision(&[false, false, false], 2).unwrap(), 0.0);
        assert!(average_precision(&[true], 0).is_err());
        assert!(average_precision(&[true, true], 1).is_err());
    }

    #[test]
    fn cmc_examples() {
        assert_eq!(cmc_at_k(&[vec![true, false]], 1).unwrap(), 1.0);
        let r = vec![vec![false, true, false]];
        assert_eq!(cmc_at_k(&r, 1).unwrap(), 0.0);
        assert_eq!(cmc_at_k(&r, 5).unwrap(), 1.0);
        let mut late = vec![false; 10];
        late[6] = true;
        let two = vec![vec![true, false], late];
        assert_eq!(cmc_at_k(&two, 5).unwrap(), 0.5);
        assert!(cmc_at_k(&two, 0).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        // TP=3 FP=1 FN=2
        let preds = [1, 1, 1, 1, 0, 0, 0];
        let labels = [1, 1, 1, 0, 1, 1, 0];
        assert!((f1(&preds, &labels).unwrap() - 6.0 / 9.0).abs() < 1e-12);
        assert_eq!(f1(&[0, 0], &[0, 0]).unwrap(), 0.0);
        assert!(f1(&[0], &[0, 1]).is_err());
    }
}
