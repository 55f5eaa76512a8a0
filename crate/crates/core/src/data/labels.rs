use std::collections::{BTreeSet, HashMap};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Class index into a label vocabulary.
pub type ClassId = u16;
pub type LabelSet = BTreeSet<ClassId>;

/// The 43 land-cover class names of the patch archive, in index order.
pub const LAND_COVER_43: [&str; 43] = [
    "Continuous urban fabric",
    "Discontinuous urban fabric",
    "Industrial or commercial units",
    "Road and rail networks and associated land",
    "Port areas",
    "Airports",
    "Mineral extraction sites",
    "Dump sites",
    "Construction sites",
    "Green urban areas",
    "Sport and leisure facilities",
    "Non-irrigated arable land",
    "Permanently irrigated land",
    "Rice fields",
    "Vineyards",
    "Fruit trees and berry plantations",
    "Olive groves",
    "Pastures",
    "Annual crops associated with permanent crops",
    "Complex cultivation patterns",
    "Land principally occupied by agriculture, with significant areas of natural vegetation",
    "Agro-forestry areas",
    "Broad-leaved forest",
    "Coniferous forest",
    "Mixed forest",
    "Natural grassland",
    "Moors and heathland",
    "Sclerophyllous vegetation",
    "Transitional woodland/shrub",
    "Beaches, dunes, sands",
    "Bare rock",
    "Sparsely vegetated areas",
    "Burnt areas",
    "Inland marshes",
    "Peatbogs",
    "Salt marshes",
    "Salines",
    "Intertidal flats",
    "Water courses",
    "Water bodies",
    "Coastal lagoons",
    "Estuaries",
    "Sea and ocean",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVocabulary {
    names: Vec<String>,
    index: HashMap<String, ClassId>,
}

impl LabelVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() || names.len() > ClassId::MAX as usize {
            return Err(Error::BadConfig(format!("vocabulary of {} names", names.len())));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i as ClassId).is_some() {
                return Err(Error::BadConfig(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn land_cover() -> Self {
        Self::new(LAND_COVER_43.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    /// Generic `class_0 .. class_{n-1}` vocabulary used for synthetic data.
    pub fn numbered(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("class_{i}")).collect()).unwrap()
    }

    /// Reads one class name per line.
    pub fn from_lines(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.index.get(name).copied()
    }

    /// Hex SHA-256 over the newline-joined names; stored in checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[derive(Deserialize)]
struct Metadata {
    #[serde(default)]
    labels: Vec<String>,
}

/// Maps the `labels` array of a patch metadata document to class indices.
pub fn parse_label_metadata(metadata_text: &str, vocab: &LabelVocabulary) -> Result<LabelSet> {
    let meta: Metadata = serde_json::from_str(metadata_text)
        .map_err(|e| Error::ParseError(format!("label metadata: {e}")))?;
    if meta.labels.is_empty() {
        return Err(Error::EmptyLabelList);
    }
    meta.labels
        .iter()
        .map(|l| {
            vocab
                .id(l.trim())
                .ok_or_else(|| Error::UnknownLabel(l.clone()))
        })
        .collect()
}
