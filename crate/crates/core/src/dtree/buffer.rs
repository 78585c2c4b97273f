//! The root s-node's d-tree, kept in memory.

use std::collections::BTreeMap;

use crate::types::{DeltaRecord, Key, KeyRange};

use super::merge::resolve;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RootBuffer {
    map: BTreeMap<Key, DeltaRecord>,
}

impl RootBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = DeltaRecord>) -> Self {
        let mut b = RootBuffer::new();
        for r in records {
            b.insert(r);
        }
        b
    }

    /// Stores `rec`, collapsing it with any record already held for the key.
    /// Returns the number of records now held.
    pub fn insert(&mut self, rec: DeltaRecord) -> usize {
        let merged = match self.map.get(&rec.key) {
            Some(old) => resolve(rec, Some(old), false),
            None => Some(rec),
        }
        .expect("resolution above the leaf level keeps the record");
        self.map.insert(merged.key.clone(), merged);
        self.map.len()
    }

    /// Adds a record that is older than anything buffered for its key.
    pub fn absorb_older(&mut self, rec: DeltaRecord) {
        let merged = match self.map.remove(&rec.key) {
            Some(newer) => resolve(newer, Some(&rec), false),
            None => Some(rec),
        }
        .expect("resolution above the leaf level keeps the record");
        self.map.insert(merged.key.clone(), merged);
    }

    /// Puts back exactly `prev` for `key` (or nothing), undoing a failed insert.
    pub fn restore(&mut self, key: &Key, prev: Option<DeltaRecord>) {
        match prev {
            Some(r) => {
                self.map.insert(key.clone(), r);
            }
            None => {
                self.map.remove(key);
            }
        }
    }

    pub fn get(&self, key: &Key) -> Option<&DeltaRecord> {
        self.map.get(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DeltaRecord> {
        self.map.values()
    }

    pub fn range(&self, range: &KeyRange) -> impl Iterator<Item = &DeltaRecord> {
        self.map.range(range.low.clone()..=range.high.clone()).map(|(_, r)| r)
    }

    /// Empties the buffer, returning its records in key order.
    pub fn take_sorted(&mut self) -> Vec<DeltaRecord> {
        std::mem::take(&mut self.map).into_values().collect()
    }
}

/// Inserts into the root buffer and returns the record count for the overflow check.
pub fn root_insert(rb: &mut RootBuffer, d: DeltaRecord) -> usize {
    rb.insert(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Value;

    fn k(v: u64) -> Key {
        Key::from_u64(v, 8)
    }

    #[test]
    fn overflow_count_follows_inserts() {
        let mut rb = RootBuffer::new();
        let mut last = 0;
        for (i, key) in [1u64, 2, 8, 15, 21, 32].into_iter().enumerate() {
            last = root_insert(&mut rb, DeltaRecord::put(k(key), Value::from_u64(key, 8), i as u64));
        }
        assert_eq!(last, 6);
        assert_eq!(root_insert(&mut rb, DeltaRecord::put(k(33), Value::from_u64(33, 8), 7)), 7);
    }

    #[test]
    fn put_then_delete_collapses() {
        let mut rb = RootBuffer::new();
        rb.insert(DeltaRecord::put(k(5), Value::from_u64(1, 8), 1));
        assert_eq!(rb.insert(DeltaRecord::delete(k(5), 2)), 1);
        assert_eq!(rb.get(&k(5)), Some(&DeltaRecord::delete(k(5), 2)));
    }

    #[test]
    fn absorbed_older_record_stays_below() {
        let mut rb = RootBuffer::new();
        rb.insert(DeltaRecord::update(k(5), Value::from_u64(2, 8), 9));
        rb.absorb_older(DeltaRecord::put(k(5), Value::from_u64(1, 8), 3));
        rb.absorb_older(DeltaRecord::put(k(6), Value::from_u64(1, 8), 4));
        assert_eq!(rb.get(&k(5)), Some(&DeltaRecord::put(k(5), Value::from_u64(2, 8), 9)));
        assert_eq!(rb.len(), 2);
    }

    #[test]
    fn update_over_buffered_put_becomes_put() {
        let mut rb = RootBuffer::new();
        rb.insert(DeltaRecord::put(k(5), Value::from_u64(1, 8), 1));
        rb.insert(DeltaRecord::update(k(5), Value::from_u64(2, 8), 2));
        assert_eq!(rb.get(&k(5)), Some(&DeltaRecord::put(k(5), Value::from_u64(2, 8), 2)));
    }
}
