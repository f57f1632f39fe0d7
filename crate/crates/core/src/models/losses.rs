//! Triplet margin loss and averaged binary cross-entropy, with their
//! analytic gradients.

use crate::error::{Error, Result};

/// Probabilities are clamped into `[PROB_EPSILON, 1 - PROB_EPSILON]` before
/// taking logs.
pub const PROB_EPSILON: f64 = 1e-7;

/// An (anchor, positive, negative) triple of embeddings with its margin.
#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a> {
    pub anchor: &'a [f64],
    pub positive: &'a [f64],
    pub negative: &'a [f64],
    pub margin: f64,
}

impl<'a> Triplet<'a> {
    pub fn new(
        anchor: &'a [f64],
        positive: &'a [f64],
        negative: &'a [f64],
        margin: f64,
    ) -> Result<Self> {
        if positive.len() != anchor.len() {
            return Err(Error::dims(
                "triplet positive",
                anchor.len(),
                positive.len(),
            ));
        }
        if negative.len() != anchor.len() {
            return Err(Error::dims(
                "triplet negative",
                anchor.len(),
                negative.len(),
            ));
        }
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "triplet margin {margin} must be > 0"
            )));
        }
        Ok(Triplet {
            anchor,
            positive,
            negative,
            margin,
        })
    }

    /// `‖a − p‖² − ‖a − n‖² + m`, the argument of the hinge.
    fn hinge_argument(&self) -> f64 {
        squared_distance(self.anchor, self.positive) - squared_distance(self.anchor, self.negative)
            + self.margin
    }

    pub fn is_active(&self) -> bool {
        self.hinge_argument() > 0.0
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `max(0, ‖a − p‖² − ‖a − n‖² + m)`.
pub fn triplet_loss(t: &Triplet<'_>) -> f64 {
    t.hinge_argument().max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Gradients of [`triplet_loss`] with respect to each member. All zero when
/// the hinge is inactive (argument ≤ 0).
pub fn triplet_grad(t: &Triplet<'_>) -> TripletGrad {
    let d = t.anchor.len();
    if !t.is_active() {
        return TripletGrad {
            anchor: vec![0.0; d],
            positive: vec![0.0; d],
            negative: vec![0.0; d],
        };
    }
    let (a, p, n) = (t.anchor, t.positive, t.negative);
    TripletGrad {
        anchor: (0..d).map(|i| 2.0 * (n[i] - p[i])).collect(),
        positive: (0..d).map(|i| -2.0 * (a[i] - p[i])).collect(),
        negative: (0..d).map(|i| 2.0 * (a[i] - n[i])).collect(),
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// `−(1/M) Σ_j [a_j ln p_j + (1 − a_j) ln(1 − p_j)]` with clamped `p`.
/// An empty vector has loss 0.
pub fn avg_bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::dims("bce labels", probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &a)| {
            let p = clamp_prob(p);
            if a == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-sum / probs.len() as f64)
}

/// Gradient of [`avg_bce_loss`] of `sigmoid(logits)` with respect to the
/// logits: `(p_j − a_j) / M`, ignoring the clamp.
pub fn avg_bce_logit_grad(logits: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    if logits.len() != labels.len() {
        return Err(Error::dims("bce labels", logits.len(), labels.len()));
    }
    let m = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(&z, &a)| (sigmoid(z) - f64::from(a)) / m)
        .collect())
}
