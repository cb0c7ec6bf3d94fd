//! The 19-value label space.
//!
//! The canonical column order below is fixed across every artifact the
//! toolkit reads or writes; reports embed it so they are self-describing.

use crate::error::{Error, Result};
use std::collections::HashSet;

pub const NUM_VALUES: usize = 19;

/// Canonical order of the refined Schwartz values.
pub const VALUE_NAMES: [&str; NUM_VALUES] = [
    "Self-direction: thought",
    "Self-direction: action",
    "Stimulation",
    "Hedonism",
    "Achievement",
    "Power: dominance",
    "Power: resources",
    "Face",
    "Security: personal",
    "Security: societal",
    "Tradition",
    "Conformity: rules",
    "Conformity: interpersonal",
    "Humility",
    "Benevolence: caring",
    "Benevolence: dependability",
    "Universalism: concern",
    "Universalism: nature",
    "Universalism: tolerance",
];

/// Column name of the derived moral-presence label.
pub const PRESENCE_COLUMN: &str = "presence";

/// Ordered list of the 19 value names used as column headers everywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueTaxonomy {
    names: Vec<String>,
}

impl Default for ValueTaxonomy {
    fn default() -> Self {
        ValueTaxonomy {
            names: VALUE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ValueTaxonomy {
    /// Builds a taxonomy from custom names; exactly 19 distinct entries.
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() != NUM_VALUES {
            return Err(Error::InvalidArgument(format!(
                "taxonomy needs {} values, got {}",
                NUM_VALUES,
                names.len()
            )));
        }
        let distinct: HashSet<&str> = names.iter().map(|s| s.as_str()).collect();
        if distinct.len() != NUM_VALUES {
            return Err(Error::InvalidArgument(
                "taxonomy names must be distinct".into(),
            ));
        }
        Ok(ValueTaxonomy { names })
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_taxonomy_has_19_distinct_names() {
        let tax = ValueTaxonomy::default();
        assert_eq!(tax.len(), 19);
        let set: HashSet<&str> = VALUE_NAMES.iter().copied().collect();
        assert_eq!(set.len(), 19);
        assert_eq!(tax.name(13), "Humility");
        assert_eq!(tax.index_of("Security: societal"), Some(9));
    }

    #[test]
    fn rejects_wrong_cardinality_and_duplicates() {
        assert!(ValueTaxonomy::new(vec!["a".into()]).is_err());
        let mut names: Vec<String> = VALUE_NAMES.iter().map(|s| s.to_string()).collect();
        names[1] = names[0].clone();
        assert!(ValueTaxonomy::new(names).is_err());
    }
}
