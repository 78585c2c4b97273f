//! Point lookups and leaf scans.

use crate::error::{Error, Result};
use crate::pager::{Cursor, Extent, PageId};
use crate::types::{DeltaRecord, Key, KeyRange};

use super::merge::SortedSource;
use super::node::{leaf_find, route, DNode};
use super::{DTree, Io};

fn read_page(extent: Extent, page: PageId, head: Cursor, io: &mut Io<'_>) -> Result<Vec<u8>> {
    if !extent.contains(page) {
        return Err(Error::Codec(format!("page {page} outside d-tree extent {extent:?}")));
    }
    let mut buf = vec![0u8; io.layout.page_bytes];
    io.pager.read_page_into(extent, page - extent.start, head, io.stats, &mut buf)?;
    Ok(buf)
}

/// Descends from the root to the leaf that would hold `key`, returning its ordinal.
fn descend(tree: &DTree, extent: Extent, key: &Key, head: Cursor, io: &mut Io<'_>) -> Result<u64> {
    let mut page = tree.root_page;
    for _ in 1..tree.height {
        let buf = read_page(extent, page, head, io)?;
        match DNode::decode(&buf, io.layout)? {
            DNode::Internal { seps, children } => page = children[route(&seps, key)],
            DNode::Leaf(_) => return Err(Error::Codec("leaf above the leaf level".into())),
        }
    }
    Ok(page - extent.start)
}

/// Finds the live record for `key`. Reads at most `tree.height` pages and none
/// at all when the key falls outside the live key span.
pub fn lookup(tree: &DTree, key: &Key, head: Cursor, io: &mut Io<'_>) -> Result<Option<DeltaRecord>> {
    if !tree.may_hold(key) {
        return Ok(None);
    }
    let extent = tree.extent.expect("non-empty d-tree has an extent");
    let leaf = descend(tree, extent, key, head, io)?;
    let buf = read_page(extent, extent.start + leaf, head, io)?;
    leaf_find(&buf, io.layout, key)
}

/// Pull-based scan over the live records of a d-tree, optionally bounded.
#[derive(Clone, Debug)]
pub struct LeafCursor {
    tree: DTree,
    head: Cursor,
    low: Option<Key>,
    high: Option<Key>,
    next_leaf: u64,
    positioned: bool,
    buf: Vec<DeltaRecord>,
    pos: usize,
    /// Ordinal of the leaf `buf` came from.
    buf_leaf: u64,
    done: bool,
}

/// Scans the live records of `tree` within `range` (all live records if `None`).
pub fn scan(tree: &DTree, range: Option<&KeyRange>, head: Cursor) -> LeafCursor {
    LeafCursor::new(tree, range.map(|r| r.low.clone()), range.map(|r| r.high.clone()), head)
}

impl LeafCursor {
    pub fn new(tree: &DTree, low: Option<Key>, high: Option<Key>, head: Cursor) -> Self {
        let live = tree.live_start_key().cloned();
        let low = match (low, live) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        let empty_range = matches!((&low, &high), (Some(l), Some(h)) if l > h);
        LeafCursor {
            tree: tree.clone(),
            head,
            low,
            high,
            next_leaf: 0,
            positioned: false,
            buf: Vec::new(),
            pos: 0,
            buf_leaf: 0,
            done: tree.record_count == 0 || empty_range,
        }
    }

    /// Ordinal of the leaf holding the record `peek` would return.
    pub fn current_leaf(&self) -> u64 {
        self.buf_leaf
    }

    fn position(&mut self, io: &mut Io<'_>) -> Result<()> {
        self.positioned = true;
        let extent = self.tree.extent.expect("non-empty d-tree has an extent");
        let low = match &self.low {
            None => {
                self.next_leaf = 0;
                return Ok(());
            }
            Some(l) => l.clone(),
        };
        if let Some(max) = &self.tree.max_key {
            if &low > max {
                self.done = true;
                return Ok(());
            }
        }
        self.next_leaf = match &self.tree.live_start {
            Some(ls) if ls.key == low => ls.leaf,
            _ if self.tree.min_key.as_ref().is_some_and(|m| &low <= m) => 0,
            _ => descend(&self.tree, extent, &low, self.head, io)?,
        };
        Ok(())
    }

    fn fill(&mut self, io: &mut Io<'_>) -> Result<()> {
        if self.done {
            return Ok(());
        }
        if !self.positioned {
            self.position(io)?;
        }
        while !self.done && self.pos >= self.buf.len() {
            if self.next_leaf >= self.tree.leaf_count {
                self.done = true;
                break;
            }
            let extent = self.tree.extent.expect("non-empty d-tree has an extent");
            let buf = read_page(extent, extent.start + self.next_leaf, self.head, io)?;
            let records = match DNode::decode(&buf, io.layout)? {
                DNode::Leaf(r) => r,
                DNode::Internal { .. } => {
                    return Err(Error::Codec("internal node inside the leaf run".into()))
                }
            };
            self.buf_leaf = self.next_leaf;
            self.next_leaf += 1;
            self.pos = match &self.low {
                Some(l) => records.partition_point(|r| &r.key < l),
                None => 0,
            };
            self.buf = records;
        }
        if !self.done {
            if let Some(h) = &self.high {
                if &self.buf[self.pos].key > h {
                    self.done = true;
                }
            }
        }
        Ok(())
    }

    pub fn peek(&mut self, io: &mut Io<'_>) -> Result<Option<&DeltaRecord>> {
        self.fill(io)?;
        if self.done {
            return Ok(None);
        }
        Ok(Some(&self.buf[self.pos]))
    }

    pub fn next_record(&mut self, io: &mut Io<'_>) -> Result<Option<DeltaRecord>> {
        self.fill(io)?;
        if self.done {
            return Ok(None);
        }
        let r = std::mem::replace(
            &mut self.buf[self.pos],
            DeltaRecord::delete(Key::new(Vec::new()), 0),
        );
        self.pos += 1;
        Ok(Some(r))
    }

    /// Drains the cursor into a vector.
    pub fn collect_all(mut self, io: &mut Io<'_>) -> Result<Vec<DeltaRecord>> {
        let mut out = Vec::new();
        while let Some(r) = self.next_record(io)? {
            out.push(r);
        }
        Ok(out)
    }
}

impl<'a> SortedSource<Io<'a>> for LeafCursor {
    fn peek(&mut self, cx: &mut Io<'a>) -> Result<Option<&DeltaRecord>> {
        LeafCursor::peek(self, cx)
    }

    fn next_record(&mut self, cx: &mut Io<'a>) -> Result<Option<DeltaRecord>> {
        LeafCursor::next_record(self, cx)
    }
}
