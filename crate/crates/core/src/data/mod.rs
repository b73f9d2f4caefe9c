//! Synthetic domain-shifted datasets, the input transformation chain, and
//! k-shot support-set construction.

mod augment;
mod container;
mod generate;
mod support;

pub use augment::{augment, augment_apply, hflip, resized_crop, transform_inference, AugmentDecisions};
pub use container::{decode_dataset, encode_dataset, read_dataset, write_dataset, write_manifest_csv};
pub use generate::{generate_domain, generate_sample, DomainConfig};
pub use support::{build_support_set, split};

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// One grayscale image, pixels in [0, 1] flattened row-major, plus its
/// class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pixels: Vec<f64>,
    pub label: usize,
}

/// A labeled collection from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub domain_id: String,
    pub class_count: usize,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn feature_dim(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Class-balanced labeled set: exactly k samples for every selected class.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub per_class: BTreeMap<usize, Vec<Sample>>,
    pub k: usize,
    pub classes: Vec<usize>,
}

impl SupportSet {
    pub fn new(k: usize, classes: Vec<usize>) -> Self {
        let per_class = classes.iter().map(|&c| (c, Vec::new())).collect();
        SupportSet { k, classes, per_class }
    }

    /// Total number of samples across classes.
    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every selected class holds exactly k samples.
    pub fn is_balanced(&self) -> bool {
        self.classes
            .iter()
            .all(|c| self.per_class.get(c).map(Vec::len) == Some(self.k))
    }

    /// Flattened (sample, label) view in class order.
    pub fn flattened(&self) -> Vec<&Sample> {
        self.per_class.values().flatten().collect()
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.classes {
            let got = self.per_class.get(c).map(Vec::len).unwrap_or(0);
            if got != self.k {
                return Err(Error::Scarcity {
                    class: *c,
                    requested: self.k,
                    available: got,
                });
            }
        }
        Ok(())
    }
}
