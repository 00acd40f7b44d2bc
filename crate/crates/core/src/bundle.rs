//! Sets of goods.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a good, in `[0, m)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoodId(pub usize);

impl fmt::Display for GoodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

/// A bundle of goods. Ordered by good index so iteration is deterministic.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bundle(BTreeSet<GoodId>);

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(g: GoodId) -> Self {
        let mut b = Self::new();
        b.insert(g);
        b
    }

    /// All goods `0..m`.
    pub fn full(m: usize) -> Self {
        (0..m).map(GoodId).collect()
    }

    pub fn insert(&mut self, g: GoodId) -> bool {
        self.0.insert(g)
    }

    pub fn remove(&mut self, g: GoodId) -> bool {
        self.0.remove(&g)
    }

    pub fn contains(&self, g: GoodId) -> bool {
        self.0.contains(&g)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<GoodId> {
        self.0.first().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = GoodId> + '_ {
        self.0.iter().copied()
    }

    pub fn union(&self, other: &Bundle) -> Bundle {
        Bundle(self.0.union(&other.0).copied().collect())
    }

    pub fn with(&self, g: GoodId) -> Bundle {
        let mut b = self.clone();
        b.insert(g);
        b
    }

    pub fn without(&self, g: GoodId) -> Bundle {
        let mut b = self.clone();
        b.remove(g);
        b
    }

    pub fn difference(&self, other: &Bundle) -> Bundle {
        Bundle(self.0.difference(&other.0).copied().collect())
    }

    pub fn is_subset(&self, other: &Bundle) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn is_disjoint(&self, other: &Bundle) -> bool {
        self.0.is_disjoint(&other.0)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|g| g.0).collect()
    }
}

impl FromIterator<GoodId> for Bundle {
    fn from_iter<I: IntoIterator<Item = GoodId>>(iter: I) -> Self {
        Bundle(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Bundle {
    type Item = GoodId;
    type IntoIter = std::iter::Copied<std::collections::btree_set::Iter<'a, GoodId>>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter().copied()
    }
}

impl fmt::Display for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, g) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", g.0)?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_algebra() {
        let a: Bundle = [0, 2, 3].into_iter().map(GoodId).collect();
        let b: Bundle = [3, 4].into_iter().map(GoodId).collect();
        assert_eq!(a.union(&b).indices(), vec![0, 2, 3, 4]);
        assert_eq!(a.difference(&b).indices(), vec![0, 2]);
        assert!(!a.is_disjoint(&b));
        assert!(a.without(GoodId(3)).is_disjoint(&b));
        assert_eq!(a.to_string(), "{0,2,3}");
        assert_eq!(Bundle::full(3).len(), 3);
    }
}
