//! Deep structural check of the committed tree.

use std::collections::HashSet;

use crate::dtree::{internal_pages, DNode, DTree, Layout};
use crate::error::Result;
use crate::pager::{Cursor, Extent, IoStats, Pager};
use crate::types::{DeltaRecord, Key, Mode};

use super::stree::{NodeData, NodeId, STree};
use super::NBTree;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    /// First invariant found broken, with the s-node path.
    pub violation: Option<String>,
    pub stree_height: u32,
    pub max_dtree_height: u32,
    pub snodes: usize,
    pub disk_records: u64,
    pub buffered_records: usize,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violation.is_none()
    }
}

type Check<T> = std::result::Result<T, String>;

struct Walker<'a> {
    tree: &'a STree,
    pager: &'a Pager,
    layout: &'a Layout,
    sigma: u64,
    fanout: usize,
    mode: Mode,
    has_deletes: bool,
    stats: IoStats,
    leaf_depth: Option<u32>,
    /// (key, depth, seq) of every live record; depth 0 is the active buffer.
    seen: Vec<(Key, u32, u64)>,
    extents: Vec<Extent>,
}

pub(crate) fn validate(t: &NBTree) -> Result<ValidationReport> {
    let tree = &*t.committed;
    let mut w = Walker {
        tree,
        pager: &t.pager,
        layout: &t.layout,
        sigma: t.config.sigma as u64,
        fanout: t.config.stree_fanout,
        mode: t.config.mode,
        has_deletes: t.has_deletes,
        stats: IoStats::new(t.config.read_heads),
        leaf_depth: None,
        seen: Vec::new(),
        extents: Vec::new(),
    };
    let violation = w.run(t).err();
    Ok(ValidationReport {
        violation,
        stree_height: tree.height(),
        max_dtree_height: tree.max_dtree_height(),
        snodes: tree.live_ids().count(),
        disk_records: tree.disk_records(),
        buffered_records: t.buffered(),
    })
}

impl Walker<'_> {
    fn run(&mut self, t: &NBTree) -> Check<()> {
        if t.active.len() > t.config.sigma && !t.overfull {
            return Err(format!("root buffer holds {} > sigma records", t.active.len()));
        }
        let mut max_seq = 0;
        for r in t.active.iter() {
            self.seen.push((r.key.clone(), 0, r.seq));
            max_seq = max_seq.max(r.seq);
        }
        if let Some(c) = &t.cascade {
            for r in c.frozen.iter() {
                self.seen.push((r.key.clone(), 1, r.seq));
                max_seq = max_seq.max(r.seq);
            }
        }
        if max_seq > t.seq {
            return Err(format!("buffered seq {max_seq} beyond last issued {}", t.seq));
        }
        let root = self.tree.root;
        if !matches!(self.tree.node(root).data, NodeData::Buffer) {
            return Err("root: d-tree must be the in-memory buffer".into());
        }
        self.node(root, "root".into(), 0, None, None)?;
        self.check_seqs()?;
        self.check_extents(t.cascade.is_none())
    }

    fn node(&mut self, id: NodeId, path: String, depth: u32, lo: Option<&Key>, hi: Option<&Key>) -> Check<()> {
        let tree = self.tree;
        let node = tree.try_node(id).ok_or_else(|| format!("{path}: dangling s-node {id}"))?;
        let is_root = id == tree.root;
        if !is_root && !matches!(node.data, NodeData::Disk { .. }) {
            return Err(format!("{path}: non-root s-node without an on-disk d-tree"));
        }
        if let NodeData::Disk { tree: dt, bloom } = &node.data {
            let live = self.dtree(dt, &path)?;
            for r in &live {
                if lo.is_some_and(|l| &r.key < l) || hi.is_some_and(|h| &r.key >= h) {
                    return Err(format!("{path}: key {:?} outside s-node interval", r.key));
                }
                if let Some(b) = bloom {
                    if !b.may_contain(&r.key) {
                        return Err(format!("{path}: filter misses stored key {:?}", r.key));
                    }
                }
                if node.is_leaf() && r.is_tombstone() {
                    return Err(format!("{path}: tombstone stored at leaf level"));
                }
                self.seen.push((r.key.clone(), depth + 2, r.seq));
            }
            if bloom.is_none() && !dt.is_empty() {
                return Err(format!("{path}: non-empty d-tree without a filter"));
            }
            self.size_bounds(node.is_leaf(), dt.record_count, &path)?;
        }
        if node.is_leaf() {
            if !node.s_keys.is_empty() {
                return Err(format!("{path}: leaf s-node with routing keys"));
            }
            match self.leaf_depth {
                None => self.leaf_depth = Some(depth),
                Some(d) if d != depth => {
                    return Err(format!("{path}: leaf at depth {depth}, expected {d}"));
                }
                _ => {}
            }
            return Ok(());
        }
        if node.children.len() != node.s_keys.len() + 1 {
            return Err(format!(
                "{path}: {} children for {} routing keys",
                node.children.len(),
                node.s_keys.len()
            ));
        }
        if node.children.len() > self.fanout {
            return Err(format!("{path}: {} children exceed fanout {}", node.children.len(), self.fanout));
        }
        if !is_root && node.children.len() < self.fanout.div_ceil(2) {
            return Err(format!("{path}: {} children below half fanout", node.children.len()));
        }
        for (i, k) in node.s_keys.iter().enumerate() {
            if i > 0 && node.s_keys[i - 1] >= *k {
                return Err(format!("{path}: routing keys not ascending"));
            }
            if lo.is_some_and(|l| k < l) || hi.is_some_and(|h| k >= h) {
                return Err(format!("{path}: routing key {k:?} outside interval"));
            }
        }
        let children_are_leaves = tree.node(node.children[0]).is_leaf();
        if self.mode == Mode::Advanced && !children_are_leaves {
            let sum: u64 = node.children.iter().map(|&c| tree.node(c).live()).sum();
            let cap = self.fanout as u64 * (self.sigma + 1);
            if sum > cap {
                return Err(format!("{path}: children hold {sum} records, more than {cap}"));
            }
        }
        for (i, &c) in node.children.iter().enumerate() {
            let clo = if i == 0 { lo } else { Some(&node.s_keys[i - 1]) };
            let chi = node.s_keys.get(i).or(hi);
            self.node(c, format!("{path}/{i}"), depth + 1, clo, chi)?;
        }
        Ok(())
    }

    fn size_bounds(&self, leaf: bool, live: u64, path: &str) -> Check<()> {
        let limit_applies = leaf || self.mode == Mode::Basic;
        if limit_applies && live > self.sigma {
            return Err(format!("{path}: d-tree holds {live} > sigma records"));
        }
        if leaf && !self.has_deletes && live < self.sigma.div_ceil(2) {
            return Err(format!("{path}: leaf d-tree holds {live} < sigma/2 records"));
        }
        Ok(())
    }

    fn read(&mut self, extent: Extent, page: u64, path: &str) -> Check<DNode> {
        if !extent.contains(page) {
            return Err(format!("{path}: page {page} outside extent {extent:?}"));
        }
        let mut buf = vec![0u8; self.layout.page_bytes];
        self.pager
            .read_page_into(extent, page - extent.start, Cursor::A, &mut self.stats, &mut buf)
            .map_err(|e| format!("{path}: {e}"))?;
        DNode::decode(&buf, self.layout).map_err(|e| format!("{path}: {e}"))
    }

    /// Checks one d-tree page by page and returns its live records.
    fn dtree(&mut self, t: &DTree, path: &str) -> Check<Vec<DeltaRecord>> {
        let Some(extent) = t.extent else {
            if t.record_count != 0 || t.stored_records != 0 || t.leaf_count != 0 || t.height != 0 {
                return Err(format!("{path}: empty d-tree with non-zero metadata"));
            }
            return Ok(Vec::new());
        };
        self.extents.push(extent);
        let l = self.layout.leaf_records as u64;
        if t.leaf_count != t.stored_records.div_ceil(l) {
            return Err(format!("{path}: {} leaves for {} records", t.leaf_count, t.stored_records));
        }
        if extent.len != t.leaf_count + internal_pages(t.leaf_count, self.layout.fanout) {
            return Err(format!("{path}: extent of {} pages does not match shape", extent.len));
        }

        // Internal levels, top down. Each level lists page ids left to right.
        let mut level = vec![t.root_page];
        for depth in 1..t.height {
            let mut next = Vec::new();
            let count = level.len();
            for (i, &p) in level.iter().enumerate() {
                match self.read(extent, p, path)? {
                    DNode::Internal { seps, children } => {
                        if children.len() > self.layout.fanout {
                            return Err(format!("{path}: d-node {p} exceeds fanout"));
                        }
                        let rightmost = i + 1 == count;
                        if depth > 1 && !rightmost && children.len() < self.layout.fanout.div_ceil(2) {
                            return Err(format!("{path}: d-node {p} below half fanout"));
                        }
                        if seps.windows(2).any(|w| w[0] >= w[1]) {
                            return Err(format!("{path}: d-node {p} separators not ascending"));
                        }
                        next.extend(children);
                    }
                    DNode::Leaf(_) => return Err(format!("{path}: leaf above leaf level")),
                }
            }
            level = next;
        }
        let expect: Vec<u64> = (0..t.leaf_count).map(|i| extent.start + i).collect();
        if level != expect {
            return Err(format!("{path}: leaves not stored first and in key order"));
        }

        let mut all = Vec::with_capacity(t.stored_records as usize);
        let mut leaf_of_first_live = None;
        for i in 0..t.leaf_count {
            match self.read(extent, extent.start + i, path)? {
                DNode::Leaf(rs) => {
                    let full = i + 1 < t.leaf_count;
                    if full && rs.len() as u64 != l {
                        return Err(format!("{path}: leaf {i} not full"));
                    }
                    for r in rs {
                        if let Some(ls) = &t.live_start {
                            if leaf_of_first_live.is_none() && r.key >= ls.key {
                                leaf_of_first_live = Some((i, r.key == ls.key));
                            }
                        }
                        all.push(r);
                    }
                }
                DNode::Internal { .. } => return Err(format!("{path}: internal node in leaf run")),
            }
        }
        if all.len() as u64 != t.stored_records {
            return Err(format!("{path}: {} stored records, expected {}", all.len(), t.stored_records));
        }
        if all.windows(2).any(|w| w[0].key >= w[1].key) {
            return Err(format!("{path}: records not strictly ascending"));
        }
        if all.first().map(|r| &r.key) != t.min_key.as_ref()
            || all.last().map(|r| &r.key) != t.max_key.as_ref()
        {
            return Err(format!("{path}: min/max keys do not match contents"));
        }
        let live: Vec<DeltaRecord> = match &t.live_start {
            None => all,
            Some(ls) => {
                match leaf_of_first_live {
                    Some((leaf, true)) if leaf == ls.leaf => {}
                    _ => return Err(format!("{path}: live start {:?} does not point at a stored record", ls.key)),
                }
                all.into_iter().filter(|r| r.key >= ls.key).collect()
            }
        };
        if live.len() as u64 != t.record_count {
            return Err(format!("{path}: {} live records, expected {}", live.len(), t.record_count));
        }
        Ok(live)
    }

    /// A key's record nearer the root must be the newest one.
    fn check_seqs(&mut self) -> Check<()> {
        self.seen.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        for w in self.seen.windows(2) {
            let ((k1, d1, s1), (k2, d2, s2)) = (&w[0], &w[1]);
            if k1 == k2 {
                if d1 == d2 {
                    return Err(format!("key {k1:?} stored twice at depth {d1}"));
                }
                if s1 <= s2 {
                    return Err(format!("key {k1:?}: seq {s1} at depth {d1} not newer than {s2} at depth {d2}"));
                }
            }
        }
        Ok(())
    }

    fn check_extents(&self, exact: bool) -> Check<()> {
        self.pager.audit().map_err(|e| format!("pager: {e}"))?;
        let live: HashSet<(u64, u64)> =
            self.pager.live_extents().iter().map(|e| (e.start, e.len)).collect();
        let mut mine = HashSet::new();
        for e in &self.extents {
            if !live.contains(&(e.start, e.len)) {
                return Err(format!("d-tree extent {e:?} is not live"));
            }
            if !mine.insert((e.start, e.len)) {
                return Err(format!("extent {e:?} shared by two d-trees"));
            }
        }
        if exact && mine.len() != live.len() {
            return Err(format!("{} live extents but {} referenced", live.len(), mine.len()));
        }
        Ok(())
    }
}
