//! Per-attribute binarization thresholds chosen by Matthews correlation.
//!
//! For each attribute, every candidate threshold on the grid is tried and the
//! one with the highest MCC on the calibration split wins. Ties go to the
//! smallest threshold. Predictions are positive when `prob >= threshold`.
//!
//! # Threshold document
//!
//! JSON with `schema_version`, `ontology_checksum`, `grid` (`description`
//! and the explicit candidate `values`), `provenance` (free-form string map:
//! calibration split, probability source, ...) and `entries`, one
//! `{attribute, threshold, mcc}` per ontology attribute in canonical order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ontology::Ontology;

pub const THRESHOLDS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn from_predictions(preds: &[u8], labels: &[u8]) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::dims("confusion labels", preds.len(), labels.len()));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &l) in preds.iter().zip(labels) {
            match (p != 0, l != 0) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    ((tp * tn - fp * fn_) / denom.sqrt()).clamp(-1.0, 1.0)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(threshold))
    }
}

/// `1` where `prob >= threshold`.
pub fn binarize(probs: &[f64], threshold: f64) -> Result<Vec<u8>> {
    check_threshold(threshold)?;
    Ok(probs.iter().map(|&p| u8::from(p >= threshold)).collect())
}

/// Candidate thresholds, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub description: String,
    pub values: Vec<f64>,
}

impl Default for ThresholdGrid {
    /// `0.01, 0.02, …, 0.99`.
    fn default() -> Self {
        ThresholdGrid {
            description: "arithmetic 0.01..=0.99 step 0.01".into(),
            values: (1..=99).map(|i| i as f64 / 100.0).collect(),
        }
    }
}

impl ThresholdGrid {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for &t in &values {
            check_threshold(t)?;
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(ThresholdGrid {
            description: format!("explicit ({} values)", values.len()),
            values,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for &t in &self.values {
            check_threshold(t)?;
        }
        if !self.values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "threshold grid must be strictly ascending".into(),
            ));
        }
        Ok(())
    }
}

/// Best `(threshold, mcc)` for one attribute.
///
/// Samples are sorted by probability once; sweeping the ascending grid then
/// moves samples from "predicted positive" to "predicted negative" so every
/// candidate costs O(1) amortised.
pub fn calibrate_attribute(
    probs: &[f64],
    labels: &[u8],
    grid: &ThresholdGrid,
) -> Result<(f64, f64)> {
    grid.validate()?;
    if probs.len() != labels.len() {
        return Err(Error::dims("calibration labels", probs.len(), labels.len()));
    }
    if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidArgument(format!("label {l} is not 0 or 1")));
    }

    let mut order: Vec<(f64, u8)> = probs.iter().copied().zip(labels.iter().copied()).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let total_neg = labels.len() as u64 - total_pos;

    let mut below = 0usize;
    let (mut pos_below, mut neg_below) = (0u64, 0u64);
    let mut best: Option<(f64, f64)> = None;
    for &t in &grid.values {
        while below < order.len() && order[below].0 < t {
            if order[below].1 == 1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            below += 1;
        }
        let counts = ConfusionCounts {
            tp: total_pos - pos_below,
            fp: total_neg - neg_below,
            fn_: pos_below,
            tn: neg_below,
        };
        let score = mcc(&counts);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((t, score));
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub attribute: String,
    pub threshold: f64,
    pub mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdTable {
    pub schema_version: u32,
    pub ontology_checksum: String,
    pub grid: ThresholdGrid,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
    pub entries: Vec<ThresholdEntry>,
}

impl ThresholdTable {
    /// Calibrate every attribute of `ontology`. `probs_per_attr[j]` and
    /// `labels_per_attr[j]` hold attribute `j`'s values over all samples.
    pub fn calibrate(
        ontology: &Ontology,
        probs_per_attr: &[Vec<f64>],
        labels_per_attr: &[Vec<u8>],
        grid: &ThresholdGrid,
        exec: Execution,
    ) -> Result<ThresholdTable> {
        let m = ontology.len();
        if probs_per_attr.len() != m {
            return Err(Error::dims(
                "calibration attribute count",
                m,
                probs_per_attr.len(),
            ));
        }
        if labels_per_attr.len() != m {
            return Err(Error::dims(
                "calibration attribute count",
                m,
                labels_per_attr.len(),
            ));
        }
        grid.validate()?;
        let jobs: Vec<usize> = (0..m).collect();
        let entries = exec.try_map(&jobs, |&j| {
            let (threshold, mcc) =
                calibrate_attribute(&probs_per_attr[j], &labels_per_attr[j], grid)?;
            Ok::<_, Error>(ThresholdEntry {
                attribute: ontology.attributes()[j].name.clone(),
                threshold,
                mcc,
            })
        })?;
        Ok(ThresholdTable {
            schema_version: THRESHOLDS_VERSION,
            ontology_checksum: ontology.checksum(),
            grid: grid.clone(),
            provenance: BTreeMap::new(),
            entries,
        })
    }

    /// The same threshold for every attribute, without calibration.
    pub fn uniform(ontology: &Ontology, threshold: f64) -> Result<ThresholdTable> {
        check_threshold(threshold)?;
        Ok(ThresholdTable {
            schema_version: THRESHOLDS_VERSION,
            ontology_checksum: ontology.checksum(),
            grid: ThresholdGrid::new(vec![threshold])?,
            provenance: BTreeMap::from([("source".to_string(), "uniform".to_string())]),
            entries: ontology
                .attribute_names()
                .map(|name| ThresholdEntry {
                    attribute: name.to_string(),
                    threshold,
                    mcc: 0.0,
                })
                .collect(),
        })
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.threshold).collect()
    }

    pub fn get(&self, attribute: &str) -> Option<&ThresholdEntry> {
        self.entries.iter().find(|e| e.attribute == attribute)
    }

    /// Binarize a probability vector in canonical order with the per-attribute
    /// thresholds.
    pub fn binarize_vector(&self, probs: &[f64]) -> Result<Vec<u8>> {
        if probs.len() != self.entries.len() {
            return Err(Error::dims(
                "probability vector",
                self.entries.len(),
                probs.len(),
            ));
        }
        Ok(probs
            .iter()
            .zip(&self.entries)
            .map(|(&p, e)| u8::from(p >= e.threshold))
            .collect())
    }

    /// Check the table was built for `ontology` with entries in canonical order.
    pub fn check_ontology(&self, ontology: &Ontology) -> Result<()> {
        let found = ontology.checksum();
        if self.ontology_checksum != found {
            return Err(Error::ChecksumMismatch {
                context: "threshold table".into(),
                expected: self.ontology_checksum.clone(),
                found,
            });
        }
        if self.entries.len() != ontology.len()
            || !self
                .entries
                .iter()
                .zip(ontology.attribute_names())
                .all(|(e, n)| e.attribute == n)
        {
            return Err(Error::Malformed(
                "threshold entries do not follow the ontology attribute order".into(),
            ));
        }
        for e in &self.entries {
            check_threshold(e.threshold)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, ontology: &Ontology) -> Result<ThresholdTable> {
        let table: ThresholdTable = serde_json::from_str(text)?;
        if table.schema_version != THRESHOLDS_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported thresholds schema_version {}",
                table.schema_version
            )));
        }
        table.check_ontology(ontology)?;
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>, ontology: &Ontology) -> Result<ThresholdTable> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ThresholdTable::from_json(&text, ontology)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mcc_examples() {
        assert!((mcc(&ConfusionCounts::new(5, 5, 0, 0)) - 1.0).abs() < 1e-9);
        assert!((mcc(&ConfusionCounts::new(0, 0, 5, 5)) + 1.0).abs() < 1e-9);
        let expected = 10.0 / 600f64.sqrt();
        assert!((mcc(&ConfusionCounts::new(3, 4, 1, 2)) - expected).abs() < 1e-9);
        assert!((expected - 0.408248).abs() < 1e-6);
        assert_eq!(mcc(&ConfusionCounts::new(0, 97, 0, 3)), 0.0);
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.2, 0.5, 0.9], 0.5).unwrap(), vec![0, 1, 1]);
        assert_eq!(binarize(&[0.01, 0.3, 1.0], 0.01).unwrap(), vec![1, 1, 1]);
        assert!(binarize(&[], 0.5).unwrap().is_empty());
        assert!(matches!(
            binarize(&[0.5], 1.0),
            Err(Error::InvalidThreshold(_))
        ));
        assert!(matches!(
            binarize(&[0.5], 0.0),
            Err(Error::InvalidThreshold(_))
        ));
    }

    #[test]
    fn calibrate_examples() {
        let grid = ThresholdGrid::default();
        assert_eq!(grid.values.len(), 99);
        let (t, m) = calibrate_attribute(&[0.2, 0.4, 0.6, 0.9], &[0, 0, 1, 1], &grid).unwrap();
        assert_eq!(t, 0.41);
        assert_eq!(m, 1.0);

        let (t, m) = calibrate_attribute(&[0.2, 0.4, 0.6, 0.9], &[0, 0, 0, 0], &grid).unwrap();
        assert_eq!((t, m), (0.01, 0.0));

        let (t, m) = calibrate_attribute(&[0.0, 1.0, 1.0, 0.0], &[0, 1, 1, 0], &grid).unwrap();
        assert_eq!((t, m), (0.01, 1.0));
    }

    #[test]
    fn calibrate_errors() {
        let grid = ThresholdGrid::default();
        assert!(matches!(
            calibrate_attribute(&[0.5], &[1, 0], &grid),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(ThresholdGrid::new(vec![]), Err(Error::EmptyGrid)));
        let empty = ThresholdGrid {
            description: String::new(),
            values: vec![],
        };
        assert!(matches!(
            calibrate_attribute(&[0.5], &[1], &empty),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn table_round_trip_and_checks() {
        let o = Ontology::market1501();
        let m = o.len();
        let probs: Vec<Vec<f64>> = (0..m)
            .map(|j| vec![0.1, 0.3 + j as f64 / 100.0, 0.8])
            .collect();
        let labels: Vec<Vec<u8>> = (0..m).map(|_| vec![0, 1, 1]).collect();
        let table = ThresholdTable::calibrate(
            &o,
            &probs,
            &labels,
            &ThresholdGrid::default(),
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(table.entries.len(), m);
        assert!(table
            .entries
            .iter()
            .all(|e| e.mcc == 1.0 && e.threshold == 0.11));
        let again = ThresholdTable::from_json(&table.to_json(), &o).unwrap();
        assert_eq!(table, again);
        assert_eq!(table.binarize_vector(&vec![0.11; m]).unwrap(), vec![1u8; m]);
    }
}
