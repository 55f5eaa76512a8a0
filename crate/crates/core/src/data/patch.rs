use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::labels::LabelSet;
use crate::error::{Error, Result};

/// Image domain: `Cloudy` is the cloud/shadow-corrupted domain, `Clear` the
/// clean one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Cloudy,
    Clear,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Cloudy => "cloudy",
            Domain::Clear => "clear",
        }
    }
}

/// One normalized multispectral patch, `[channels, size, size]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub patch_id: String,
    pub pixels: Array3<f32>,
    pub labels: LabelSet,
    pub domain: Domain,
}

impl Patch {
    pub fn new(
        patch_id: impl Into<String>,
        pixels: Array3<f32>,
        labels: LabelSet,
        domain: Domain,
        n_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyLabels);
        }
        if let Some(bad) = labels.iter().find(|l| **l as usize >= n_classes) {
            return Err(Error::UnknownLabel(format!("class index {bad}")));
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::NonFiniteInput(
                "patch pixels must be finite and within [0, 1]".into(),
            ));
        }
        Ok(Self {
            patch_id: patch_id.into(),
            pixels,
            labels,
            domain,
        })
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn size(&self) -> usize {
        self.pixels.dim().1
    }
}
