//! Immutable on-disk B+-trees ("d-trees"), the in-memory root buffer, and
//! sorted-stream merging with delta resolution.
//!
//! A d-tree occupies one contiguous extent: leaves first, in key order, then
//! the internal levels bottom-up. Scans therefore read leaf pages sequentially
//! without following sibling pointers.

mod buffer;
mod build;
mod merge;
mod node;
mod read;

pub use buffer::{root_insert, RootBuffer};
pub use build::{bulk_build, internal_pages, tree_pages, DTreeBuilder};
pub use merge::{
    merge_streams, merge_streams_at_leaf, resolve, resolve_alone, MemSource, Merge, MergeStreams,
    SortedSource,
};
pub use node::DNode;
pub use read::{lookup, scan, LeafCursor};

use crate::bloom::BloomFilter;
use crate::pager::{Extent, IoStats, PageId, Pager};
use crate::types::{Config, Key, RecordCodec};

/// Page geometry shared by builders and readers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub page_bytes: usize,
    pub codec: RecordCodec,
    pub leaf_records: usize,
    pub fanout: usize,
    pub bloom_bits_per_key: usize,
    pub bloom_hashes: u32,
}

impl Layout {
    pub fn from_config(c: &Config) -> Self {
        Layout {
            page_bytes: c.page_bytes,
            codec: c.codec(),
            leaf_records: c.leaf_records(),
            fanout: c.dtree_fanout,
            bloom_bits_per_key: c.bloom_bits_per_key,
            bloom_hashes: c.bloom_hashes,
        }
    }

    pub fn key_bytes(&self) -> usize {
        self.codec.key_bytes
    }

    pub fn record_bytes(&self) -> usize {
        self.codec.encoded_len()
    }
}

/// Everything a page access needs: the store, the geometry, and whose counters to charge.
pub struct Io<'a> {
    pub pager: &'a Pager,
    pub layout: &'a Layout,
    pub stats: &'a mut IoStats,
}

impl<'a> Io<'a> {
    pub fn new(pager: &'a Pager, layout: &'a Layout, stats: &'a mut IoStats) -> Self {
        Io { pager, layout, stats }
    }
}

/// Lazy-removal bound: records below `key` are logically gone. `leaf` is the
/// leaf ordinal holding `key`, so scans can start there without a descent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiveStart {
    pub key: Key,
    pub leaf: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DTree {
    /// `None` for the empty tree.
    pub extent: Option<Extent>,
    pub root_page: PageId,
    pub leaf_count: u64,
    /// Records at or above the live start.
    pub record_count: u64,
    /// Records physically stored, live or not.
    pub stored_records: u64,
    pub min_key: Option<Key>,
    pub max_key: Option<Key>,
    pub live_start: Option<LiveStart>,
    pub height: u32,
}

impl DTree {
    pub fn empty() -> Self {
        DTree::default()
    }

    pub fn is_empty(&self) -> bool {
        self.record_count == 0
    }

    pub fn live_start_key(&self) -> Option<&Key> {
        self.live_start.as_ref().map(|l| &l.key)
    }

    /// Smallest key that may still be live.
    pub fn live_min(&self) -> Option<&Key> {
        self.live_start_key().or(self.min_key.as_ref())
    }

    /// True when `key` lies inside the live key span; used to skip d-trees without I/O.
    pub fn may_hold(&self, key: &Key) -> bool {
        if self.record_count == 0 {
            return false;
        }
        match (self.live_min(), &self.max_key) {
            (Some(lo), Some(hi)) => lo <= key && key <= hi,
            _ => false,
        }
    }
}

/// A freshly built d-tree together with the filter over its keys.
#[derive(Clone, Debug)]
pub struct Built {
    pub tree: DTree,
    pub bloom: BloomFilter,
}
