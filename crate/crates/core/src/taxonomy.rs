//! The six nail categories and their canonical index order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 6;

/// Canonical category order. Indices into every probability vector,
/// confusion matrix and one-hot label follow this order.
pub const CATEGORY_NAMES: [&str; NUM_CLASSES] =
    ["acral_lentiginous_melanoma", "healthy_nail", "onychogryphosis", "blue_finger", "clubbing", "pitting"];

// Alternate spellings seen in published figures of the same dataset.
const ALIASES: [(&str, &str); 2] = [("onycholysis", "onychogryphosis"), ("blue_fingernail", "blue_finger")];

/// Lowercases, trims, and folds runs of whitespace, `-` and `_` into one `_`.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars() {
        if ch.is_whitespace() || ch == '_' || ch == '-' {
            pending_sep = !out.is_empty();
        } else {
            if pending_sep {
                out.push('_');
                pending_sep = false;
            }
            out.extend(ch.to_lowercase());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelTaxonomy {
    categories: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl LabelTaxonomy {
    /// The canonical six-category taxonomy.
    pub fn nail() -> Self {
        Self::from_names(CATEGORY_NAMES.iter().map(|s| s.to_string()).collect()).expect("canonical taxonomy is valid")
    }

    /// Builds a taxonomy from an ordered list of names. The list must be
    /// exactly six distinct names; order is preserved so that a mismatching
    /// order can be detected when loading checkpoints.
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.len() != NUM_CLASSES {
            return Err(Error::Config(format!("taxonomy needs exactly {NUM_CLASSES} categories, got {}", names.len())));
        }
        let mut index = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if index.insert(normalize_name(name), i).is_some() {
                return Err(Error::Config(format!("duplicate category {name:?}")));
            }
        }
        Ok(Self { categories: names, index })
    }

    pub fn names(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.categories.get(index).map(String::as_str)
    }

    /// Resolves a (possibly differently cased or spaced) category name,
    /// including the known aliases.
    pub fn resolve(&self, raw: &str) -> Option<usize> {
        let norm = normalize_name(raw);
        if let Some(&i) = self.index.get(&norm) {
            return Some(i);
        }
        ALIASES.iter().find(|(alias, _)| *alias == norm).and_then(|(_, canon)| self.index.get(*canon).copied())
    }

    pub fn is_canonical(&self) -> bool {
        self.categories.iter().zip(CATEGORY_NAMES).all(|(a, b)| a == b)
    }
}

impl Default for LabelTaxonomy {
    fn default() -> Self {
        Self::nail()
    }
}

impl TryFrom<Vec<String>> for LabelTaxonomy {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::from_names(names)
    }
}

impl From<LabelTaxonomy> for Vec<String> {
    fn from(t: LabelTaxonomy) -> Self {
        t.categories
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_fixed() {
        let t = LabelTaxonomy::nail();
        assert_eq!(t.len(), 6);
        assert_eq!(t.name(0), Some("acral_lentiginous_melanoma"));
        assert_eq!(t.name(5), Some("pitting"));
        assert!(t.is_canonical());
    }

    #[test]
    fn resolve_normalizes_case_and_separators() {
        let t = LabelTaxonomy::nail();
        assert_eq!(t.resolve("Acral Lentiginous  Melanoma"), Some(0));
        assert_eq!(t.resolve("Healthy_Nail"), Some(1));
        assert_eq!(t.resolve(" blue-finger "), Some(3));
        assert_eq!(t.resolve("Blue Fingernail"), Some(3));
        assert_eq!(t.resolve("Onycholysis"), Some(2));
        assert_eq!(t.resolve("psoriasis"), None);
    }

    #[test]
    fn rejects_wrong_size_and_duplicates() {
        assert!(LabelTaxonomy::from_names(vec!["a".into(); 5]).is_err());
        let mut names: Vec<String> = CATEGORY_NAMES.iter().map(|s| s.to_string()).collect();
        names[5] = "Healthy Nail".into();
        assert!(LabelTaxonomy::from_names(names).is_err());
    }

    #[test]
    fn serde_round_trip_is_a_plain_list() {
        let t = LabelTaxonomy::nail();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.starts_with("[\"acral_lentiginous_melanoma\""));
        let back: LabelTaxonomy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
