//! Linear siamese embedder trained with the triplet loss.
//!
//! One weight matrix is shared by the anchor, positive and negative branch:
//! every member is embedded with the same `y = Wᵀx`.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{squared_distance, triplet_grad, triplet_loss, Triplet};
use crate::dataset::Descriptor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    /// Output dimension; `None` keeps the input dimension.
    pub output_dim: Option<usize>,
    /// Triplet margin. Required: there is no canonical value.
    pub margin: f64,
    pub step_size: f64,
    pub max_epochs: usize,
    pub num_triplets: usize,
    pub seed: u64,
}

impl EmbedderConfig {
    pub fn new(margin: f64, seed: u64) -> Self {
        EmbedderConfig {
            output_dim: None,
            margin,
            step_size: 0.05,
            max_epochs: 40,
            num_triplets: 512,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "margin {} must be > 0",
                self.margin
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "step_size {} must be > 0",
                self.step_size
            )));
        }
        if self.output_dim == Some(0) {
            return Err(Error::InvalidConfig("output_dim must be > 0".into()));
        }
        Ok(())
    }
}

/// `input_dim × output_dim` weight matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEmbedder {
    input_dim: usize,
    output_dim: usize,
    weights: Vec<f64>,
}

impl LinearEmbedder {
    /// Leading-diagonal ones, zeros elsewhere.
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        let mut weights = vec![0.0; input_dim * output_dim];
        for i in 0..input_dim.min(output_dim) {
            weights[i * output_dim + i] = 1.0;
        }
        LinearEmbedder {
            input_dim,
            output_dim,
            weights,
        }
    }

    pub fn from_weights(input_dim: usize, output_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != input_dim * output_dim {
            return Err(Error::dims(
                "embedder weights",
                input_dim * output_dim,
                weights.len(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "embedder weights must be finite".into(),
            ));
        }
        Ok(LinearEmbedder {
            input_dim,
            output_dim,
            weights,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::dims("embedder input", self.input_dim, x.len()));
        }
        Ok(self.embed_unchecked(x))
    }

    fn embed_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output_dim];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.output_dim..(i + 1) * self.output_dim];
            for (yk, &w) in y.iter_mut().zip(row) {
                *yk += xi * w;
            }
        }
        y
    }
}

/// Indices into the training view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Uniformly sample `count` triplets: a random anchor with at least one other
/// image of the same identity, a random positive from that identity, and a
/// random negative from any other identity.
pub fn sample_triplets<R: Rng + ?Sized>(
    train: &[&Descriptor],
    count: usize,
    rng: &mut R,
) -> Result<Vec<TripletIndex>> {
    let mut by_person: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in train.iter().enumerate() {
        by_person.entry(d.person_id).or_default().push(i);
    }
    if by_person.len() < 2 {
        return Err(Error::NoNegatives);
    }
    let anchors: Vec<usize> = by_person
        .values()
        .filter(|v| v.len() >= 2)
        .flatten()
        .copied()
        .collect();
    if anchors.is_empty() {
        return Err(Error::NoPositives);
    }

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let anchor = *anchors.choose(rng).expect("non-empty");
        let pid = train[anchor].person_id;
        let same = &by_person[&pid];
        let positive = loop {
            let p = *same.choose(rng).expect("non-empty");
            if p != anchor {
                break p;
            }
        };
        let negative = loop {
            let n = rng.random_range(0..train.len());
            if train[n].person_id != pid {
                break n;
            }
        };
        out.push(TripletIndex {
            anchor,
            positive,
            negative,
        });
    }
    Ok(out)
}

/// Mean triplet loss over `triplets` and its gradient with respect to the
/// weights.
pub fn triplet_objective(
    embedder: &LinearEmbedder,
    train: &[&Descriptor],
    triplets: &[TripletIndex],
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    let d_out = embedder.output_dim;
    let mut grad = vec![0.0; embedder.weights.len()];
    if triplets.is_empty() {
        return Ok((0.0, grad));
    }
    let embedded: Vec<Vec<f64>> = train
        .iter()
        .map(|d| embedder.embed(&d.feature))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    for t in triplets {
        let triplet = Triplet::new(
            &embedded[t.anchor],
            &embedded[t.positive],
            &embedded[t.negative],
            margin,
        )?;
        let loss = triplet_loss(&triplet);
        if loss == 0.0 {
            continue;
        }
        total += loss;
        let g = triplet_grad(&triplet);
        // dL/dW_ik = Σ_member x_i · g_k
        for (member, gy) in [
            (t.anchor, &g.anchor),
            (t.positive, &g.positive),
            (t.negative, &g.negative),
        ] {
            for (i, &xi) in train[member].feature.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut grad[i * d_out..(i + 1) * d_out];
                for (w, &gk) in row.iter_mut().zip(gy.iter()) {
                    *w += xi * gk;
                }
            }
        }
    }
    let n = triplets.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grad))
}

/// Fraction of triplets whose anchor is strictly closer to the positive than
/// to the negative.
pub fn triplet_accuracy(
    embedder: &LinearEmbedder,
    train: &[&Descriptor],
    triplets: &[TripletIndex],
) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(1.0);
    }
    let mut ok = 0usize;
    for t in triplets {
        let a = embedder.embed(&train[t.anchor].feature)?;
        let p = embedder.embed(&train[t.positive].feature)?;
        let n = embedder.embed(&train[t.negative].feature)?;
        if squared_distance(&a, &p) < squared_distance(&a, &n) {
            ok += 1;
        }
    }
    Ok(ok as f64 / triplets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderTraining {
    /// Mean triplet loss before training and after every epoch.
    pub loss_history: Vec<f64>,
    pub epochs_run: usize,
    pub triplets: Vec<TripletIndex>,
}

/// Train from the identity initialisation on freshly sampled triplets.
pub fn train_embedder(
    train: &[&Descriptor],
    cfg: &EmbedderConfig,
) -> Result<(LinearEmbedder, EmbedderTraining)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::NoNegatives);
    }
    let d_in = train[0].feature.len();
    let init = LinearEmbedder::identity(d_in, cfg.output_dim.unwrap_or(d_in));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let triplets = sample_triplets(train, cfg.num_triplets, &mut rng)?;
    train_embedder_from(init, train, triplets, cfg)
}

/// Full-batch gradient descent on a fixed triplet set.
///
/// A step is accepted only if it does not increase the mean loss; otherwise
/// the step size is halved and the step retried, so the recorded loss
/// history is non-increasing. Training stops at zero loss, at a zero
/// gradient, or when no step size down to `step_size / 2^40` helps.
pub fn train_embedder_from(
    init: LinearEmbedder,
    train: &[&Descriptor],
    triplets: Vec<TripletIndex>,
    cfg: &EmbedderConfig,
) -> Result<(LinearEmbedder, EmbedderTraining)> {
    cfg.validate()?;
    let mut w = init;
    let (mut loss, mut grad) = triplet_objective(&w, train, &triplets, cfg.margin)?;
    let mut history = vec![loss];
    let mut epochs_run = 0;
    let mut step = cfg.step_size;

    for _ in 0..cfg.max_epochs {
        if loss == 0.0 || grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = LinearEmbedder {
                input_dim: w.input_dim,
                output_dim: w.output_dim,
                weights: w
                    .weights
                    .iter()
                    .zip(&grad)
                    .map(|(x, g)| x - step * g)
                    .collect(),
            };
            let (l, g) = triplet_objective(&candidate, train, &triplets, cfg.margin)?;
            if l <= loss {
                accepted = Some((candidate, l, g));
                break;
            }
            step *= 0.5;
        }
        let Some((next, l, g)) = accepted else { break };
        w = next;
        loss = l;
        grad = g;
        history.push(loss);
        epochs_run += 1;
    }

    Ok((
        w,
        EmbedderTraining {
            loss_history: history,
            epochs_run,
            triplets,
        },
    ))
}
