//! Region-local attribute classifiers.
//!
//! Each region with at least one attribute gets a group of logistic units
//! that all read the same region slice of the descriptor feature. An
//! attribute's probability therefore depends only on its own region's slice.

use serde::{Deserialize, Serialize};

use super::losses::{avg_bce_logit_grad, avg_bce_loss, sigmoid};
use crate::dataset::{region_range, region_slice, Descriptor};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ontology::{Ontology, Region};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticUnit {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticUnit {
    pub fn zeros(dim: usize) -> Self {
        LogisticUnit {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGroupConfig {
    pub step_size: f64,
    pub max_epochs: usize,
}

impl Default for AttributeGroupConfig {
    fn default() -> Self {
        AttributeGroupConfig {
            step_size: 2.0,
            max_epochs: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionClassifierGroup {
    pub region: Region,
    /// Attribute names in canonical order.
    pub attributes: Vec<String>,
    pub units: Vec<LogisticUnit>,
    /// Attributes whose training labels were constant.
    pub degenerate: Vec<bool>,
}

impl RegionClassifierGroup {
    pub fn probs(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let x = region_slice(feature, self.region)?;
        if let Some(u) = self.units.iter().find(|u| u.weights.len() != x.len()) {
            return Err(Error::dims(
                format!("`{}` classifier weights", self.region),
                x.len(),
                u.weights.len(),
            ));
        }
        Ok(self.units.iter().map(|u| u.prob(x)).collect())
    }
}

/// Mean over samples of the group's averaged BCE, and its gradient with
/// respect to every unit's `(weights, bias)`.
///
/// `inputs[i]` is sample `i`'s region slice; `labels[i]` holds the sample's
/// labels for the group's attributes, in unit order.
pub fn group_objective(
    units: &[LogisticUnit],
    inputs: &[&[f64]],
    labels: &[Vec<u8>],
) -> Result<(f64, Vec<LogisticUnit>)> {
    if inputs.len() != labels.len() {
        return Err(Error::dims("group labels", inputs.len(), labels.len()));
    }
    let mut grads: Vec<LogisticUnit> = units
        .iter()
        .map(|u| LogisticUnit::zeros(u.weights.len()))
        .collect();
    if inputs.is_empty() || units.is_empty() {
        return Ok((0.0, grads));
    }
    let n = inputs.len() as f64;
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(labels) {
        let logits: Vec<f64> = units.iter().map(|u| u.logit(x)).collect();
        let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        total += avg_bce_loss(&probs, y)?;
        for (g, dz) in grads.iter_mut().zip(avg_bce_logit_grad(&logits, y)?) {
            for (gw, &xi) in g.weights.iter_mut().zip(x.iter()) {
                *gw += dz * xi / n;
            }
            g.bias += dz / n;
        }
    }
    Ok((total / n, grads))
}

/// Fit the logistic units of `region` by full-batch gradient descent on the
/// averaged BCE of the region's attributes.
///
/// Attributes whose labels are constant over `train` are still fitted and
/// are flagged in [`RegionClassifierGroup::degenerate`].
pub fn train_region_group(
    train: &[&Descriptor],
    region: Region,
    ontology: &Ontology,
    cfg: &AttributeGroupConfig,
) -> Result<RegionClassifierGroup> {
    let indices = ontology.indices_of_region(region);
    let attributes: Vec<String> = indices
        .iter()
        .map(|&i| ontology.attributes()[i].name.clone())
        .collect();
    let dim = train.first().map_or(0, |d| d.feature.len());
    let width = region_range(dim, region)?.len();

    let mut inputs = Vec::with_capacity(train.len());
    let mut labels = Vec::with_capacity(train.len());
    for d in train {
        let all = d.labels()?;
        if all.len() != ontology.len() {
            return Err(Error::dims(
                format!("attr_labels of `{}`", d.image_id),
                ontology.len(),
                all.len(),
            ));
        }
        inputs.push(d.region_slice(region)?);
        labels.push(indices.iter().map(|&i| all[i]).collect::<Vec<u8>>());
    }

    let degenerate: Vec<bool> = (0..indices.len())
        .map(|j| labels.windows(2).all(|w| w[0][j] == w[1][j]))
        .collect();

    let mut units: Vec<LogisticUnit> = (0..indices.len())
        .map(|_| LogisticUnit::zeros(width))
        .collect();
    for _ in 0..cfg.max_epochs {
        let (_, grads) = group_objective(&units, &inputs, &labels)?;
        for (u, g) in units.iter_mut().zip(&grads) {
            for (w, gw) in u.weights.iter_mut().zip(&g.weights) {
                *w -= cfg.step_size * gw;
            }
            u.bias -= cfg.step_size * g.bias;
        }
    }

    Ok(RegionClassifierGroup {
        region,
        attributes,
        units,
        degenerate,
    })
}

/// All region groups of an ontology, validated to cover every attribute
/// exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeModel {
    groups: Vec<RegionClassifierGroup>,
    /// `owner[j] = (group, unit)` for canonical attribute `j`.
    owner: Vec<(usize, usize)>,
}

impl AttributeModel {
    pub fn new(groups: Vec<RegionClassifierGroup>, ontology: &Ontology) -> Result<Self> {
        let mut owner: Vec<Option<(usize, usize)>> = vec![None; ontology.len()];
        for (gi, g) in groups.iter().enumerate() {
            if g.units.len() != g.attributes.len() || g.degenerate.len() != g.attributes.len() {
                return Err(Error::Coverage(format!(
                    "group `{}` has {} attributes but {} units",
                    g.region,
                    g.attributes.len(),
                    g.units.len()
                )));
            }
            for (ui, name) in g.attributes.iter().enumerate() {
                let j = ontology.index_of(name)?;
                let region = ontology.attributes()[j].region;
                if region != g.region {
                    return Err(Error::Coverage(format!(
                        "`{name}` belongs to `{region}` but is predicted by group `{}`",
                        g.region
                    )));
                }
                if owner[j].replace((gi, ui)).is_some() {
                    return Err(Error::Coverage(format!("`{name}` is predicted twice")));
                }
            }
        }
        let owner = owner
            .into_iter()
            .enumerate()
            .map(|(j, o)| {
                o.ok_or_else(|| {
                    Error::Coverage(format!(
                        "`{}` has no classifier",
                        ontology.attributes()[j].name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttributeModel { groups, owner })
    }

    pub fn groups(&self) -> &[RegionClassifierGroup] {
        &self.groups
    }

    pub fn num_attributes(&self) -> usize {
        self.owner.len()
    }

    /// Probability vector in canonical ontology order.
    pub fn predict(&self, feature: &[f64]) -> Result<Vec<f64>> {
        let per_group: Vec<Vec<f64>> = self
            .groups
            .iter()
            .map(|g| g.probs(feature))
            .collect::<Result<_>>()?;
        Ok(self.owner.iter().map(|&(g, u)| per_group[g][u]).collect())
    }

    /// Canonical attribute indices flagged degenerate during training.
    pub fn degenerate_attributes(&self) -> Vec<usize> {
        self.owner
            .iter()
            .enumerate()
            .filter(|(_, &(g, u))| self.groups[g].degenerate[u])
            .map(|(j, _)| j)
            .collect()
    }
}

pub fn predict_attr_probs(model: &AttributeModel, d: &Descriptor) -> Result<Vec<f64>> {
    model.predict(&d.feature)
}

/// Train one group per region owning at least one attribute. Groups are
/// independent and are trained concurrently under [`Execution::Parallel`].
pub fn train_attribute_model(
    train: &[&Descriptor],
    ontology: &Ontology,
    cfg: &AttributeGroupConfig,
    exec: Execution,
) -> Result<AttributeModel> {
    let regions: Vec<Region> = Region::ALL
        .into_iter()
        .filter(|&r| !ontology.attributes_of_region(r).is_empty())
        .collect();
    let groups = exec.try_map(&regions, |&r| train_region_group(train, r, ontology, cfg))?;
    AttributeModel::new(groups, ontology)
}
