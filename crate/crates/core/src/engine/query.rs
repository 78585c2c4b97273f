//! Point and range queries over one consistent view of the index.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::dtree::{lookup, Io, Layout, LeafCursor, MemSource, RootBuffer, SortedSource};
use crate::error::Result;
use crate::pager::{Cursor, IoStats, Pager};
use crate::types::{DeltaRecord, Key, KeyRange, Op, Value};

use super::stree::STree;

/// Where a point query spent its effort.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryTrace {
    pub snodes_visited: u32,
    /// On-disk d-trees whose pages were read.
    pub dtrees_searched: u32,
    /// D-trees skipped because their filter ruled the key out.
    pub bloom_skips: u32,
    pub pages_read: u64,
    pub seeks: u64,
}

/// Root buffers (newest first) plus the s-tree they sit on.
pub(crate) struct View<'a> {
    pub stree: &'a STree,
    pub buffers: Vec<&'a RootBuffer>,
    pub pager: &'a Pager,
    pub layout: &'a Layout,
}

fn visible(rec: DeltaRecord) -> Option<Value> {
    match rec.op {
        Op::Put(v) | Op::Update(v) => Some(v),
        Op::Delete => None,
    }
}

impl<'a> View<'a> {
    pub fn get(&self, key: &Key, stats: &mut IoStats) -> Result<(Option<Value>, QueryTrace)> {
        let before = stats.counts();
        let mut trace = QueryTrace::default();
        let found = self.find(key, stats, &mut trace)?;
        let used = stats.counts().since(&before);
        trace.pages_read = used.pages_read;
        trace.seeks = used.seeks;
        Ok((found.and_then(visible), trace))
    }

    fn find(&self, key: &Key, stats: &mut IoStats, trace: &mut QueryTrace) -> Result<Option<DeltaRecord>> {
        for b in &self.buffers {
            if let Some(r) = b.get(key) {
                return Ok(Some(r.clone()));
            }
        }
        let mut io = Io::new(self.pager, self.layout, stats);
        let mut node = self.stree.root_node();
        loop {
            trace.snodes_visited += 1;
            if let Some(tree) = node.dtree() {
                if tree.may_hold(key) {
                    if node.bloom().is_none_or(|b| b.may_contain(key)) {
                        trace.dtrees_searched += 1;
                        if let Some(r) = lookup(tree, key, Cursor::A, &mut io)? {
                            return Ok(Some(r));
                        }
                    } else {
                        trace.bloom_skips += 1;
                    }
                }
            }
            if node.is_leaf() {
                return Ok(None);
            }
            node = self.stree.node(node.children[node.child_for(key)]);
        }
    }

    /// One sorted stream per overlapping record container, newest level first.
    pub fn range_streams(&self, range: &KeyRange) -> Vec<Stream> {
        let mut streams: Vec<Stream> = self
            .buffers
            .iter()
            .map(|b| Stream::Mem(MemSource::new(b.range(range).cloned().collect())))
            .collect();
        let mut level = vec![self.stree.root];
        while !level.is_empty() {
            let mut next = Vec::new();
            for id in level {
                let node = self.stree.node(id);
                if let Some(t) = node.dtree() {
                    let overlaps = !t.is_empty()
                        && t.live_min().is_some_and(|lo| lo <= &range.high)
                        && t.max_key.as_ref().is_some_and(|hi| hi >= &range.low);
                    if overlaps {
                        streams.push(Stream::Disk(LeafCursor::new(
                            t,
                            Some(range.low.clone()),
                            Some(range.high.clone()),
                            Cursor::A,
                        )));
                    }
                }
                for (i, &c) in node.children.iter().enumerate() {
                    let lo_ok = i == 0 || node.s_keys[i - 1] <= range.high;
                    let hi_ok = node.s_keys.get(i).is_none_or(|hi| range.low < *hi);
                    if lo_ok && hi_ok {
                        next.push(c);
                    }
                }
            }
            level = next;
        }
        streams
    }
}

// ---------------------------------------------------------------------------
// Range iteration
// ---------------------------------------------------------------------------

pub(crate) enum Stream {
    Mem(MemSource),
    Disk(LeafCursor),
}

impl<'a> SortedSource<Io<'a>> for Stream {
    fn peek(&mut self, cx: &mut Io<'a>) -> Result<Option<&DeltaRecord>> {
        match self {
            Stream::Mem(m) => m.peek(cx),
            Stream::Disk(c) => c.peek(cx),
        }
    }

    fn next_record(&mut self, cx: &mut Io<'a>) -> Result<Option<DeltaRecord>> {
        match self {
            Stream::Mem(m) => m.next_record(cx),
            Stream::Disk(c) => c.next_record(cx),
        }
    }
}

/// Ascending live (key, value) pairs in a range. Among equal keys the stream
/// listed first (the newest level) wins; tombstones hide the key.
pub struct RangeIter<'a> {
    io: Io<'a>,
    streams: Vec<Stream>,
    heap: BinaryHeap<Reverse<(Key, usize)>>,
    primed: bool,
    failed: bool,
}

impl<'a> RangeIter<'a> {
    pub(crate) fn new(
        streams: Vec<Stream>,
        pager: &'a Pager,
        layout: &'a Layout,
        stats: &'a mut IoStats,
    ) -> Self {
        RangeIter {
            io: Io::new(pager, layout, stats),
            streams,
            heap: BinaryHeap::new(),
            primed: false,
            failed: false,
        }
    }

    fn refill(&mut self, i: usize) -> Result<()> {
        if let Some(r) = self.streams[i].peek(&mut self.io)? {
            self.heap.push(Reverse((r.key.clone(), i)));
        }
        Ok(())
    }

    fn advance(&mut self) -> Result<Option<(Key, Value)>> {
        if !self.primed {
            self.primed = true;
            for i in 0..self.streams.len() {
                self.refill(i)?;
            }
        }
        while let Some(Reverse((key, i))) = self.heap.pop() {
            let rec = self.streams[i].next_record(&mut self.io)?.expect("heap entry has a record");
            self.refill(i)?;
            while let Some(Reverse((k, j))) = self.heap.peek() {
                if *k != key {
                    break;
                }
                let j = *j;
                self.heap.pop();
                self.streams[j].next_record(&mut self.io)?;
                self.refill(j)?;
            }
            if let Some(v) = visible(rec) {
                return Ok(Some((key, v)));
            }
        }
        Ok(None)
    }
}

impl Iterator for RangeIter<'_> {
    type Item = Result<(Key, Value)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.advance() {
            Ok(r) => r.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}
