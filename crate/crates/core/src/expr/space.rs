use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use super::VarRef;
use crate::{Error, Result};

/// Ordered list of named vector blocks; the flat index of `(name, j)` is
/// the block offset plus `j`.
#[derive(Clone, Debug, Default)]
pub struct VariableSpace {
    names: Vec<Arc<str>>,
    ranges: Vec<Range<usize>>,
    lookup: HashMap<Arc<str>, usize>,
    total: usize,
}

impl VariableSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: &str, dim: usize) -> Result<Range<usize>> {
        if dim == 0 {
            return Err(Error::Argument(format!("block {name} has zero dimension")));
        }
        if self.lookup.contains_key(name) {
            return Err(Error::Argument(format!("block {name} declared twice")));
        }
        let name: Arc<str> = Arc::from(name);
        let r = self.total..self.total + dim;
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.ranges.push(r.clone());
        self.total += dim;
        Ok(r)
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn block(&self, name: &str) -> Option<Range<usize>> {
        self.lookup.get(name).map(|&b| self.ranges[b].clone())
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.names.iter().map(|n| &**n).zip(self.ranges.iter().cloned())
    }

    pub fn flat_index(&self, v: &VarRef) -> Option<usize> {
        let r = self.block(&v.name)?;
        (v.index < r.len()).then_some(r.start + v.index)
    }

    pub fn contains(&self, v: &VarRef) -> bool {
        self.flat_index(v).is_some()
    }

    /// Variable reference for a flat index.
    pub fn var_at(&self, flat: usize) -> Option<VarRef> {
        let b = self.ranges.partition_point(|r| r.end <= flat);
        let r = self.ranges.get(b)?;
        Some(VarRef { name: self.names[b].clone(), index: flat - r.start })
    }

    pub fn vars(&self, name: &str) -> Result<Vec<VarRef>> {
        let r = self.block(name).ok_or_else(|| Error::Declaration(name.to_string()))?;
        let name: Arc<str> = self.names[self.lookup[name]].clone();
        Ok((0..r.len()).map(|j| VarRef { name: name.clone(), index: j }).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_and_lookup() {
        let mut s = VariableSpace::new();
        s.declare("z", 3).unwrap();
        s.declare("lam", 2).unwrap();
        assert_eq!(s.total_dim(), 5);
        assert_eq!(s.flat_index(&VarRef::new("lam", 1)), Some(4));
        assert_eq!(s.flat_index(&VarRef::new("lam", 2)), None);
        assert_eq!(s.var_at(3), Some(VarRef::new("lam", 0)));
        assert!(s.declare("z", 1).is_err());
        assert!(s.declare("w", 0).is_err());
    }
}
