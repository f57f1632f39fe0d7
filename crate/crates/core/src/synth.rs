//! Seeded synthetic re-identification datasets.
//!
//! Every identity gets a centroid in `R^D` and a ground-truth attribute
//! vector. Each attribute owns one "signal" component of the centroid inside
//! its region's slice, set to `±signal_amplitude` by the label; all other
//! components are drawn from `N(0, centroid_scale²)`. An image's feature is
//! its identity's centroid plus `N(0, σ²)` noise. Attribute probabilities are
//! the labels, flipped with probability `attr_flip_rate`, plus
//! `N(0, attr_prob_jitter²)` jitter, clamped to `[0, 1]`.
//!
//! The first `train_fraction` of identities form the training split. For the
//! others, image 0 is the query and the rest are gallery images; image `j` of
//! identity `p` is taken by camera `(p + j) mod camera_count`, so every query
//! has a same-person gallery image on another camera.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{region_range, Dataset, Descriptor, Split};
use crate::error::{Error, Result};
use crate::ontology::{Ontology, Region};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_identities: usize,
    pub images_per_identity: usize,
    pub dim: usize,
    pub camera_count: u32,
    pub train_fraction: f64,
    pub centroid_scale: f64,
    pub signal_amplitude: f64,
    pub feature_noise_sigma: f64,
    pub attr_flip_rate: f64,
    pub attr_prob_jitter: f64,
    /// Used for attributes missing from `positive_rate_per_attr` that also
    /// carry no rate in the ontology.
    pub default_positive_rate: f64,
    #[serde(default)]
    pub positive_rate_per_attr: BTreeMap<String, f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1501,
            num_identities: 120,
            images_per_identity: 6,
            dim: 64,
            camera_count: 6,
            train_fraction: 0.5,
            centroid_scale: 1.0,
            signal_amplitude: 1.5,
            feature_noise_sigma: 0.6,
            attr_flip_rate: 0.05,
            attr_prob_jitter: 0.2,
            default_positive_rate: 0.3,
            positive_rate_per_attr: BTreeMap::new(),
        }
    }
}

/// Pairs of identities that look alike but differ on one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusableSpec {
    pub attribute: String,
    /// Distance between the two centroids of a pair.
    pub pair_gap: f64,
}

impl SynthConfig {
    pub fn validate(&self, ontology: &Ontology) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_identities < 2 {
            return bad("num_identities must be >= 2".into());
        }
        if self.images_per_identity < 2 {
            return bad("images_per_identity must be >= 2".into());
        }
        if self.camera_count < 2 {
            return bad("camera_count must be >= 2".into());
        }
        if self.dim == 0 || !self.dim.is_multiple_of(4) {
            return Err(Error::IndivisibleDimension(self.dim));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad(format!(
                "train_fraction {} outside [0, 1]",
                self.train_fraction
            ));
        }
        for (name, v) in [
            ("centroid_scale", self.centroid_scale),
            ("signal_amplitude", self.signal_amplitude),
            ("feature_noise_sigma", self.feature_noise_sigma),
            ("attr_prob_jitter", self.attr_prob_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(0.0..0.5).contains(&self.attr_flip_rate) {
            return bad(format!(
                "attr_flip_rate {} outside [0, 0.5)",
                self.attr_flip_rate
            ));
        }
        let rate_ok = |r: f64| r > 0.0 && r < 1.0;
        if !rate_ok(self.default_positive_rate) {
            return bad(format!(
                "default_positive_rate {} outside (0, 1)",
                self.default_positive_rate
            ));
        }
        for (name, &r) in &self.positive_rate_per_attr {
            ontology.index_of(name)?;
            if !rate_ok(r) {
                return bad(format!("positive rate {r} of `{name}` outside (0, 1)"));
            }
        }
        signal_dims(ontology, self.dim)?;
        Ok(())
    }

    fn positive_rates(&self, ontology: &Ontology) -> Vec<f64> {
        ontology
            .attributes()
            .iter()
            .map(|a| {
                self.positive_rate_per_attr
                    .get(&a.name)
                    .copied()
                    .or(a.positive_rate.filter(|r| *r > 0.0 && *r < 1.0))
                    .unwrap_or(self.default_positive_rate)
            })
            .collect()
    }

    fn train_identities(&self) -> usize {
        (self.train_fraction * self.num_identities as f64).round() as usize
    }
}

/// Centroid component carrying each attribute's signal, in canonical order.
///
/// Head, upper, lower and foot attributes take consecutive components from
/// the start of their quarter. Body attributes alternate between the upper
/// and lower quarters after those regions' own attributes.
pub fn signal_dims(ontology: &Ontology, dim: usize) -> Result<Vec<usize>> {
    let mut next: BTreeMap<Region, usize> = BTreeMap::new();
    for r in [Region::Head, Region::Upper, Region::Lower, Region::Foot] {
        next.insert(r, region_range(dim, r)?.start);
    }
    let mut dims = vec![0usize; ontology.len()];
    let mut take = |r: Region| -> Result<usize> {
        let end = region_range(dim, r)?.end;
        let slot = next.get_mut(&r).expect("quarter region");
        if *slot >= end {
            return Err(Error::InvalidConfig(format!(
                "dimension {dim} leaves too few `{r}` components for its attributes"
            )));
        }
        *slot += 1;
        Ok(*slot - 1)
    };
    for (j, a) in ontology.attributes().iter().enumerate() {
        if a.region != Region::Body {
            dims[j] = take(a.region)?;
        }
    }
    let mut alternate = [Region::Upper, Region::Lower].into_iter().cycle();
    for (j, a) in ontology.attributes().iter().enumerate() {
        if a.region == Region::Body {
            dims[j] = take(alternate.next().expect("cycle"))?;
        }
    }
    Ok(dims)
}

struct Identity {
    centroid: Vec<f64>,
    labels: Vec<u8>,
}

fn draw_labels(rng: &mut ChaCha8Rng, rates: &[f64]) -> Vec<u8> {
    rates
        .iter()
        .map(|&r| u8::from(rng.random_bool(r)))
        .collect()
}

fn draw_centroid(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    labels: &[u8],
    signal: &[usize],
) -> Vec<f64> {
    let background = Normal::new(0.0, cfg.centroid_scale).expect("validated scale");
    let mut c: Vec<f64> = (0..cfg.dim).map(|_| background.sample(rng)).collect();
    apply_signal(&mut c, cfg, labels, signal);
    c
}

fn apply_signal(c: &mut [f64], cfg: &SynthConfig, labels: &[u8], signal: &[usize]) {
    for (&d, &l) in signal.iter().zip(labels) {
        c[d] = if l == 1 {
            cfg.signal_amplitude
        } else {
            -cfg.signal_amplitude
        };
    }
}

fn render(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    ontology: &Ontology,
    identities: &[Identity],
    train_count: usize,
) -> Result<Dataset> {
    let noise = Normal::new(0.0, cfg.feature_noise_sigma).expect("validated sigma");
    let jitter = Normal::new(0.0, cfg.attr_prob_jitter).expect("validated jitter");
    let mut descriptors = Vec::with_capacity(identities.len() * cfg.images_per_identity);
    for (p, id) in identities.iter().enumerate() {
        for j in 0..cfg.images_per_identity {
            let camera_id = ((p + j) % cfg.camera_count as usize) as u32;
            let split = if p < train_count {
                Split::Train
            } else if j == 0 {
                Split::Query
            } else {
                Split::Gallery
            };
            let feature: Vec<f64> = id.centroid.iter().map(|&c| c + noise.sample(rng)).collect();
            let attr_probs: Vec<f64> = id
                .labels
                .iter()
                .map(|&l| {
                    let flipped = rng.random_bool(cfg.attr_flip_rate);
                    let base = if (l == 1) != flipped { 1.0 } else { 0.0 };
                    (base + jitter.sample(rng)).clamp(0.0, 1.0)
                })
                .collect();
            descriptors.push(Descriptor {
                image_id: format!("p{p:05}_c{camera_id}_i{j:02}"),
                person_id: p as u32,
                camera_id,
                split,
                feature,
                attr_probs: Some(attr_probs),
                attr_labels: Some(id.labels.clone()),
            });
        }
    }
    Dataset::new(descriptors, ontology)
}

/// Generate a dataset. A pure function of `cfg` (including its seed) and
/// `ontology`.
pub fn generate(cfg: &SynthConfig, ontology: &Ontology) -> Result<Dataset> {
    cfg.validate(ontology)?;
    let signal = signal_dims(ontology, cfg.dim)?;
    let rates = cfg.positive_rates(ontology);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let identities: Vec<Identity> = (0..cfg.num_identities)
        .map(|_| {
            let labels = draw_labels(&mut rng, &rates);
            let centroid = draw_centroid(&mut rng, cfg, &labels, &signal);
            Identity { centroid, labels }
        })
        .collect();
    render(&mut rng, cfg, ontology, &identities, cfg.train_identities())
}

/// Generate look-alike identity pairs `(2k, 2k+1)`.
///
/// The second identity of a pair copies the first one's centroid and labels,
/// flips the designated attribute's label, and moves its centroid by
/// `pair_gap` in a random direction. The designated attribute's signal
/// component is copied unchanged, so the pair can be told apart only through
/// the attribute channel (or the gap). Both identities of a pair land in the
/// same split.
pub fn scenario_confusable(
    cfg: &SynthConfig,
    ontology: &Ontology,
    spec: &ConfusableSpec,
) -> Result<Dataset> {
    cfg.validate(ontology)?;
    if !cfg.num_identities.is_multiple_of(2) {
        return Err(Error::InvalidConfig(
            "confusable scenario needs an even num_identities".into(),
        ));
    }
    if !(spec.pair_gap >= 0.0 && spec.pair_gap.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "pair_gap {} must be >= 0",
            spec.pair_gap
        )));
    }
    let designated = ontology.index_of(&spec.attribute)?;
    let signal = signal_dims(ontology, cfg.dim)?;
    let rates = cfg.positive_rates(ontology);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut identities = Vec::with_capacity(cfg.num_identities);
    for _ in 0..cfg.num_identities / 2 {
        let mut labels = draw_labels(&mut rng, &rates);
        labels[designated] = u8::from(rng.random_bool(0.5));
        let centroid = draw_centroid(&mut rng, cfg, &labels, &signal);

        let direction: Vec<f64> = (0..cfg.dim).map(|_| unit.sample(&mut rng)).collect();
        let norm = direction
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let twin_centroid: Vec<f64> = centroid
            .iter()
            .zip(&direction)
            .map(|(c, d)| c + spec.pair_gap * d / norm)
            .collect();
        let mut twin_labels = labels.clone();
        twin_labels[designated] = 1 - labels[designated];

        identities.push(Identity { centroid, labels });
        identities.push(Identity {
            centroid: twin_centroid,
            labels: twin_labels,
        });
    }
    let train_pairs = (cfg.train_fraction * (cfg.num_identities / 2) as f64).round() as usize;
    render(&mut rng, cfg, ontology, &identities, 2 * train_pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_identities: 10,
            images_per_identity: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let o = Ontology::market1501();
        let a = generate(&small(), &o).unwrap();
        let b = generate(&small(), &o).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_records(), b.to_records());
        let mut other = small();
        other.seed += 1;
        assert_ne!(a, generate(&other, &o).unwrap());
    }

    #[test]
    fn identities_share_labels() {
        let o = Ontology::market1501();
        let ds = generate(&small(), &o).unwrap();
        let mut by_person: BTreeMap<u32, &Vec<u8>> = BTreeMap::new();
        for d in ds.descriptors() {
            let labels = d.attr_labels.as_ref().unwrap();
            assert_eq!(*by_person.entry(d.person_id).or_insert(labels), labels);
        }
    }

    #[test]
    fn split_and_camera_layout() {
        let o = Ontology::market1501();
        let ds = generate(&small(), &o).unwrap();
        assert_eq!(ds.split_views().sizes(), (15, 5, 10));
        for q in ds.view(Split::Query) {
            assert!(ds
                .view(Split::Gallery)
                .iter()
                .any(|g| g.person_id == q.person_id && g.camera_id != q.camera_id));
        }
    }

    #[test]
    fn signal_dims_stay_in_region() {
        let o = Ontology::market1501();
        let dims = signal_dims(&o, 64).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for (a, &d) in o.attributes().iter().zip(&dims) {
            assert!(
                region_range(64, a.region).unwrap().contains(&d),
                "{}",
                a.name
            );
            assert!(seen.insert(d));
        }
        assert!(matches!(signal_dims(&o, 32), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn rejects_invalid_config() {
        let o = Ontology::market1501();
        type Tweak = Box<dyn Fn(&mut SynthConfig)>;
        let cases: Vec<Tweak> = vec![
            Box::new(|c| c.num_identities = 1),
            Box::new(|c| c.images_per_identity = 1),
            Box::new(|c| c.camera_count = 1),
            Box::new(|c| c.attr_flip_rate = 0.5),
            Box::new(|c| c.feature_noise_sigma = -1.0),
            Box::new(|c| {
                c.positive_rate_per_attr.insert("tail".into(), 0.2);
            }),
        ];
        for mutate in cases {
            let mut cfg = small();
            mutate(&mut cfg);
            assert!(generate(&cfg, &o).is_err());
        }
        let mut cfg = small();
        cfg.dim = 66;
        assert!(matches!(
            generate(&cfg, &o),
            Err(Error::IndivisibleDimension(66))
        ));
    }

    #[test]
    fn confusable_pairs_differ_on_one_attribute() {
        let o = Ontology::market1501();
        let spec = ConfusableSpec {
            attribute: "down black".into(),
            pair_gap: 0.0,
        };
        let cfg = SynthConfig {
            feature_noise_sigma: 0.0,
            ..small()
        };
        let ds = scenario_confusable(&cfg, &o, &spec).unwrap();
        let j = o.index_of("down black").unwrap();
        let first = |p: u32| ds.descriptors().iter().find(|d| d.person_id == p).unwrap();
        for k in 0..5 {
            let (a, b) = (first(2 * k), first(2 * k + 1));
            assert_eq!(a.feature, b.feature);
            assert_eq!(a.split, b.split);
            let (la, lb) = (
                a.attr_labels.as_ref().unwrap(),
                b.attr_labels.as_ref().unwrap(),
            );
            let diff: Vec<usize> = (0..o.len()).filter(|&i| la[i] != lb[i]).collect();
            assert_eq!(diff, vec![j]);
        }
        let mut odd = cfg.clone();
        odd.num_identities = 9;
        assert!(scenario_confusable(&odd, &o, &spec).is_err());
    }
}
