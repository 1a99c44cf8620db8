use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Trim and collapse internal whitespace runs to single spaces.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A `(head, relation, tail)` triple. Surface forms are stored whitespace-collapsed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RelationTriple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        RelationTriple {
            head: collapse_whitespace(head),
            relation: collapse_whitespace(relation),
            tail: collapse_whitespace(tail),
        }
    }

    pub fn as_array(&self) -> [&str; 3] {
        [&self.head, &self.relation, &self.tail]
    }
}

impl fmt::Display for RelationTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

/// Deduplicated triple set with a deterministic (lexicographic) iteration order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TripleSet(BTreeSet<RelationTriple>);

impl TripleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when the triple was already present.
    pub fn insert(&mut self, triple: RelationTriple) -> bool {
        self.0.insert(triple)
    }

    pub fn contains(&self, triple: &RelationTriple) -> bool {
        self.0.contains(triple)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationTriple> {
        self.0.iter()
    }

    pub fn intersection_count(&self, other: &TripleSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn is_subset(&self, other: &TripleSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<RelationTriple> for TripleSet {
    fn from_iter<I: IntoIterator<Item = RelationTriple>>(iter: I) -> Self {
        TripleSet(iter.into_iter().collect())
    }
}

impl IntoIterator for TripleSet {
    type Item = RelationTriple;
    type IntoIter = std::collections::btree_set::IntoIter<RelationTriple>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

impl<'a> IntoIterator for &'a TripleSet {
    type Item = &'a RelationTriple;
    type IntoIter = std::collections::btree_set::Iter<'a, RelationTriple>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}
