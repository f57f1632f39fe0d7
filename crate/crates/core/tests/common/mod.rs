//! Brute-force reference implementations and fixtures shared by the
//! integration tests.

#![allow(dead_code)]

use pao_reid::{Descriptor, Ontology, Split};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// MCC from raw counts, written out independently of the library.
pub fn mcc_reference(tp: u64, tn: u64, fp: u64, fn_: u64) -> f64 {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        0.0
    } else {
        ((tp * tn - fp * fn_) / denom.sqrt()).clamp(-1.0, 1.0)
    }
}

/// Count a full confusion matrix at every grid value and keep the first
/// maximiser.
pub fn calibrate_reference(probs: &[f64], labels: &[u8], grid: &[f64]) -> (f64, f64) {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for &t in grid {
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (&p, &l) in probs.iter().zip(labels) {
            match (p >= t, l == 1) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        let m = mcc_reference(tp, tn, fp, fn_);
        if m > best.1 {
            best = (t, m);
        }
    }
    best
}

pub fn default_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Probabilities drawn either continuously or on the 0.01 lattice, so that
/// some samples sit exactly on grid values.
pub fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let lattice = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            if lattice {
                rng.random_range(0..=100) as f64 / 100.0
            } else {
                rng.random_range(0.0..=1.0)
            }
        })
        .collect()
}

pub struct BruteForceScores {
    pub map_score: f64,
    /// `cmc[k-1]` for k = 1..=10.
    pub cmc: Vec<f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Plain kNN evaluation: rank every admissible gallery image by Euclidean
/// distance (ties by id), then score AP and CMC from the relevance list.
pub fn retrieval_reference(
    queries: &[&Descriptor],
    gallery: &[&Descriptor],
    mask: bool,
) -> BruteForceScores {
    let mut ap_sum = 0.0;
    let mut first_hits = Vec::new();
    let mut skipped = 0;
    for q in queries {
        let mut admissible: Vec<(f64, &str, bool)> = gallery
            .iter()
            .filter(|g| !(mask && g.person_id == q.person_id && g.camera_id == q.camera_id))
            .map(|g| {
                let d = q
                    .feature
                    .iter()
                    .zip(&g.feature)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (d, g.image_id.as_str(), g.person_id == q.person_id)
            })
            .collect();
        admissible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        let relevant_total = admissible.iter().filter(|x| x.2).count();
        if relevant_total == 0 {
            skipped += 1;
            continue;
        }
        let positions: Vec<usize> = admissible
            .iter()
            .enumerate()
            .filter(|(_, x)| x.2)
            .map(|(i, _)| i + 1)
            .collect();
        let mut ap = 0.0;
        for (seen, &pos) in positions.iter().enumerate() {
            ap += (seen + 1) as f64 / pos as f64;
        }
        ap_sum += ap / relevant_total as f64;
        first_hits.push(positions[0]);
    }
    let n = first_hits.len();
    let cmc = (1..=10)
        .map(|k| {
            if n == 0 {
                0.0
            } else {
                first_hits.iter().filter(|&&p| p <= k).count() as f64 / n as f64
            }
        })
        .collect();
    BruteForceScores {
        map_score: if n == 0 { 0.0 } else { ap_sum / n as f64 },
        cmc,
        evaluated: n,
        skipped,
    }
}

/// A descriptor with random probabilities/labels for every attribute.
pub fn random_descriptor(
    rng: &mut ChaCha8Rng,
    ontology: &Ontology,
    id: String,
    person_id: u32,
    camera_id: u32,
    split: Split,
    dim: usize,
) -> Descriptor {
    let m = ontology.len();
    Descriptor {
        image_id: id,
        person_id,
        camera_id,
        split,
        feature: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        attr_probs: Some((0..m).map(|_| rng.random_range(0.0..=1.0)).collect()),
        attr_labels: Some((0..m).map(|_| u8::from(rng.random_bool(0.5))).collect()),
    }
}
