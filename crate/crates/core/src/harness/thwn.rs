//! Single-node trie-hashed file: one trie, buckets in one address space.
//! Reference for what the distributed file must agree with.

use std::collections::BTreeSet;

use crate::key_space::Key;
use crate::server::{compute_split_string, lower_half_len};
use crate::trie::{Trie, TrieError};
use crate::ServerId;

#[derive(Debug, Clone)]
pub struct ThwnFile {
    trie: Trie,
    buckets: Vec<BTreeSet<Key>>,
    capacity: usize,
}

impl ThwnFile {
    pub fn new(capacity: usize) -> ThwnFile {
        assert!(capacity >= 1);
        ThwnFile { trie: Trie::leaf(ServerId(0)), buckets: vec![BTreeSet::new()], capacity }
    }

    pub fn trie(&self) -> &Trie {
        &self.trie
    }

    pub fn buckets(&self) -> &[BTreeSet<Key>] {
        &self.buckets
    }

    pub fn bucket_of(&self, key: &Key) -> Result<ServerId, TrieError> {
        Ok(self.trie.search(key)?.target)
    }

    pub fn contains(&self, key: &Key) -> Result<bool, TrieError> {
        Ok(self.buckets[self.bucket_of(key)?.0 as usize].contains(key))
    }

    /// Inserts `key`, splitting its bucket on overflow. Returns false for
    /// a duplicate.
    pub fn insert(&mut self, key: Key) -> Result<bool, TrieError> {
        let m = self.bucket_of(&key)?;
        let bucket = &mut self.buckets[m.0 as usize];
        if !bucket.insert(key) {
            return Ok(false);
        }
        if bucket.len() > self.capacity {
            let sorted: Vec<&Key> = bucket.iter().collect();
            let split = compute_split_string(&sorted);
            let first_moved = sorted[lower_half_len(sorted.len())].clone();
            let new = ServerId(self.buckets.len() as u32);
            self.trie.split_owner(&split, m, new)?;
            let moved = self.buckets[m.0 as usize].split_off(&first_moved);
            self.buckets.push(moved);
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::key_space::Bound;

    #[test]
    fn split_fixture() {
        let mut f = ThwnFile::new(4);
        for k in ["abmf", "abnm", "acnm", "aczm", "acz"] {
            assert!(f.insert(k.parse().unwrap()).unwrap());
        }
        assert_eq!(f.buckets().len(), 2);
        assert_eq!(f.buckets()[0].len(), 3);
        assert_eq!(f.trie().leaf_sequence().unwrap()[0], (ServerId(0), Bound::from("acn")));
        assert!(!f.insert("acz".parse().unwrap()).unwrap());
    }
}
