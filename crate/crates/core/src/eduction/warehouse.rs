use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::Context;
use crate::lang::{GeerId, NodeId};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WarehouseKey {
    pub geer_id: GeerId,
    pub node: NodeId,
    pub context: Context,
}

impl WarehouseKey {
    /// The context is canonicalized over `declared`, so contexts that read
    /// alike share a key.
    pub fn new(geer_id: &GeerId, node: NodeId, context: &Context, declared: &[String]) -> Self {
        WarehouseKey { geer_id: geer_id.clone(), node, context: context.canonical(declared) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedValue {
    pub value: Value,
    pub committed_at: u64,
    /// Free-form label, e.g. the procedure that produced a cached result.
    pub tag: Option<String>,
}

/// First-write-wins value cache.
#[derive(Debug, Clone)]
pub struct Warehouse<K = WarehouseKey> {
    entries: HashMap<K, CachedValue>,
    hits: u64,
    misses: u64,
}

impl<K> Default for Warehouse<K> {
    fn default() -> Self {
        Warehouse { entries: HashMap::new(), hits: 0, misses: 0 }
    }
}

impl<K: Eq + Hash + Clone> Warehouse<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&mut self, key: &K) -> Option<Value> {
        match self.entries.get(key) {
            Some(c) => {
                self.hits += 1;
                Some(c.value.clone())
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn peek(&self, key: &K) -> Option<&CachedValue> {
        self.entries.get(key)
    }

    /// Returns false (and keeps the existing value) if the key is present.
    pub fn commit(&mut self, key: K, value: Value) -> bool {
        self.commit_at(key, value, 0, None)
    }

    pub fn commit_at(&mut self, key: K, value: Value, committed_at: u64, tag: Option<String>) -> bool {
        if self.entries.contains_key(&key) {
            return false;
        }
        self.entries.insert(key, CachedValue { value, committed_at, tag });
        true
    }

    /// Unconditional write, used when merging caches by commit time.
    pub fn overwrite(&mut self, key: K, cached: CachedValue) {
        self.entries.insert(key, cached);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &CachedValue)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(t: i64) -> WarehouseKey {
        WarehouseKey::new(&GeerId("ab".repeat(16)), 4, &Context::from_pairs([("t", t)]), &["t".into()])
    }

    #[test]
    fn first_write_wins() {
        let mut wh = Warehouse::new();
        assert_eq!(wh.lookup(&key(1)), None);
        assert!(wh.commit(key(1), Value::Int(5)));
        assert!(!wh.commit(key(1), Value::Int(6)));
        assert_eq!(wh.lookup(&key(1)), Some(Value::Int(5)));
        assert_eq!((wh.hits(), wh.misses()), (1, 1));
    }

    #[test]
    fn keys_are_canonical() {
        let dims = ["t".to_owned(), "s".to_owned()];
        let g = GeerId("00".repeat(16));
        let a = WarehouseKey::new(&g, 1, &Context::new(), &dims);
        let b = WarehouseKey::new(&g, 1, &Context::from_pairs([("s", 0), ("t", 0), ("z", 9)]), &dims);
        assert_eq!(a, b);
    }
}
