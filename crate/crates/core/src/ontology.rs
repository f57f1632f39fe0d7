//! Pedestrian attribute ontology: body regions, clothing categories and the
//! binary attributes they own.
//!
//! # Document format
//!
//! An ontology is stored as a JSON document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "market1501-attribute",
//!   "regions": [
//!     { "name": "head" }, { "name": "upper" }, { "name": "lower" },
//!     { "name": "foot" }, { "name": "body", "parts": ["upper", "lower"] }
//!   ],
//!   "categories": [ { "name": "headwear", "region": "head" } ],
//!   "attributes": [
//!     { "name": "wearing hat", "region": "head", "category": "headwear",
//!       "positive_rate": 0.026 }
//!   ]
//! }
//! ```
//!
//! * `regions` must list exactly the five regions `head`, `upper`, `lower`,
//!   `foot` and `body`. Only `body` is composite and its `parts` must be
//!   `upper` and `lower`.
//! * `categories[].region` names the region that has the category.
//! * `attributes` is ordered: the position of an attribute in this list is its
//!   index in every attribute vector. `category` is optional, and when present
//!   the category must belong to the same region as the attribute.
//!
//! Attributes assigned to `body` belong to `body` alone; they are not the
//! union of the `upper` and `lower` attributes.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

const MARKET1501_DOCUMENT: &str = include_str!("../data/market1501_ontology.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Head,
    Upper,
    Lower,
    Foot,
    /// Composite of [`Region::Upper`] and [`Region::Lower`].
    Body,
}

impl Region {
    pub const ALL: [Region; 5] = [
        Region::Head,
        Region::Upper,
        Region::Lower,
        Region::Foot,
        Region::Body,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Head => "head",
            Region::Upper => "upper",
            Region::Lower => "lower",
            Region::Foot => "foot",
            Region::Body => "body",
        }
    }

    pub fn is_composite(self) -> bool {
        self == Region::Body
    }

    pub fn parts(self) -> &'static [Region] {
        match self {
            Region::Body => &[Region::Upper, Region::Lower],
            _ => &[],
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::UnknownRegion(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub name: String,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDef {
    pub name: String,
    pub region: Region,
    pub category: Option<String>,
    pub positive_rate: Option<f64>,
}

/// A validated ontology. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Ontology {
    name: String,
    categories: Vec<Category>,
    attributes: Vec<AttributeDef>,
    index: HashMap<String, usize>,
}

// ---------------------------------------------------------------------------
// Document types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OntologyDocument {
    pub schema_version: u32,
    pub name: String,
    pub regions: Vec<RegionDoc>,
    #[serde(default)]
    pub categories: Vec<CategoryDoc>,
    #[serde(default)]
    pub attributes: Vec<AttributeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDoc {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryDoc {
    pub name: String,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeDoc {
    pub name: String,
    pub region: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_rate: Option<f64>,
}

/// Parse and validate an ontology document.
pub fn load_ontology(source: &str) -> Result<Ontology> {
    let doc: OntologyDocument = serde_json::from_str(source)?;
    Ontology::from_document(&doc)
}

pub fn load_ontology_file(path: impl AsRef<Path>) -> Result<Ontology> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_ontology(&text)
}

fn check_region_graph(regions: &[RegionDoc]) -> Result<HashMap<Region, Vec<Region>>> {
    let mut graph: HashMap<Region, Vec<Region>> = HashMap::new();
    for doc in regions {
        let region: Region = doc.name.parse()?;
        if graph.contains_key(&region) {
            return Err(Error::Malformed(format!(
                "region `{region}` declared twice"
            )));
        }
        let parts = doc
            .parts
            .iter()
            .map(|p| p.parse())
            .collect::<Result<Vec<Region>>>()?;
        graph.insert(region, parts);
    }

    // Depth-first search over the part-of edges.
    fn visit(
        node: Region,
        graph: &HashMap<Region, Vec<Region>>,
        stack: &mut Vec<Region>,
        done: &mut BTreeSet<Region>,
    ) -> Result<()> {
        if done.contains(&node) {
            return Ok(());
        }
        if let Some(pos) = stack.iter().position(|&r| r == node) {
            let mut path: Vec<&str> = stack[pos..].iter().map(|r| r.name()).collect();
            path.push(node.name());
            return Err(Error::CycleDetected(path.join(" -> ")));
        }
        stack.push(node);
        for &child in graph.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
            visit(child, graph, stack, done)?;
        }
        stack.pop();
        done.insert(node);
        Ok(())
    }

    let mut done = BTreeSet::new();
    for region in Region::ALL {
        if graph.contains_key(&region) {
            visit(region, &graph, &mut Vec::new(), &mut done)?;
        }
    }
    Ok(graph)
}

impl Ontology {
    /// The bundled Market1501-attribute ontology: 25 attributes over head,
    /// body, upper and lower.
    pub fn market1501() -> Ontology {
        load_ontology(MARKET1501_DOCUMENT).expect("bundled ontology is valid")
    }

    pub fn market1501_document() -> &'static str {
        MARKET1501_DOCUMENT
    }

    pub fn from_document(doc: &OntologyDocument) -> Result<Ontology> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }

        let graph = check_region_graph(&doc.regions)?;
        for region in Region::ALL {
            let parts = graph
                .get(&region)
                .ok_or_else(|| Error::Malformed(format!("region `{region}` is missing")))?;
            let declared: BTreeSet<Region> = parts.iter().copied().collect();
            let expected: BTreeSet<Region> = region.parts().iter().copied().collect();
            if declared != expected || declared.len() != parts.len() {
                return Err(Error::Malformed(format!(
                    "region `{region}` must have parts [{}]",
                    region
                        .parts()
                        .iter()
                        .map(|r| r.name())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
        }

        let mut categories: Vec<Category> = Vec::with_capacity(doc.categories.len());
        for c in &doc.categories {
            if categories.iter().any(|k| k.name == c.name) {
                return Err(Error::Malformed(format!(
                    "category `{}` declared twice",
                    c.name
                )));
            }
            categories.push(Category {
                name: c.name.clone(),
                region: c.region.parse()?,
            });
        }

        let mut attributes = Vec::with_capacity(doc.attributes.len());
        let mut index = HashMap::with_capacity(doc.attributes.len());
        for a in &doc.attributes {
            if a.name.trim().is_empty() {
                return Err(Error::Malformed("attribute with empty name".into()));
            }
            if index.contains_key(&a.name) {
                return Err(Error::DuplicateAttribute(a.name.clone()));
            }
            let region: Region = a.region.parse()?;
            if let Some(cat_name) = &a.category {
                let cat = categories
                    .iter()
                    .find(|c| &c.name == cat_name)
                    .ok_or_else(|| Error::UnknownCategory(cat_name.clone()))?;
                if cat.region != region {
                    return Err(Error::AmbiguousPath {
                        attribute: a.name.clone(),
                        category: cat_name.clone(),
                        declared: region.to_string(),
                        via: cat.region.to_string(),
                    });
                }
            }
            if let Some(rate) = a.positive_rate {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(Error::Malformed(format!(
                        "positive_rate {rate} of `{}` outside [0, 1]",
                        a.name
                    )));
                }
            }
            index.insert(a.name.clone(), attributes.len());
            attributes.push(AttributeDef {
                name: a.name.clone(),
                region,
                category: a.category.clone(),
                positive_rate: a.positive_rate,
            });
        }

        Ok(Ontology {
            name: doc.name.clone(),
            categories,
            attributes,
            index,
        })
    }

    pub fn to_document(&self) -> OntologyDocument {
        OntologyDocument {
            schema_version: SCHEMA_VERSION,
            name: self.name.clone(),
            regions: Region::ALL
                .iter()
                .map(|r| RegionDoc {
                    name: r.name().to_string(),
                    parts: r.parts().iter().map(|p| p.name().to_string()).collect(),
                })
                .collect(),
            categories: self
                .categories
                .iter()
                .map(|c| CategoryDoc {
                    name: c.name.clone(),
                    region: c.region.name().to_string(),
                })
                .collect(),
            attributes: self
                .attributes
                .iter()
                .map(|a| AttributeDoc {
                    name: a.name.clone(),
                    region: a.region.name().to_string(),
                    category: a.category.clone(),
                    positive_rate: a.positive_rate,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document()).expect("serializable");
        s.push('\n');
        s
    }

    /// SHA-256 over the canonical (compact) document, hex encoded.
    pub fn checksum(&self) -> String {
        let canonical = serde_json::to_string(&self.to_document()).expect("serializable");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn regions(&self) -> &'static [Region] {
        &Region::ALL
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// Attributes in canonical vector order.
    pub fn attributes(&self) -> &[AttributeDef] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Attributes owned by `region`, in canonical order.
    pub fn attributes_of_region(&self, region: Region) -> Vec<&AttributeDef> {
        self.attributes
            .iter()
            .filter(|a| a.region == region)
            .collect()
    }

    pub fn attributes_of_region_named(&self, region: &str) -> Result<Vec<&AttributeDef>> {
        Ok(self.attributes_of_region(region.parse()?))
    }

    /// Canonical indices of the attributes owned by `region`.
    pub fn indices_of_region(&self, region: Region) -> Vec<usize> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.region == region)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn region_of_attribute(&self, name: &str) -> Result<Region> {
        Ok(self.attributes[self.index_of(name)?].region)
    }
}
