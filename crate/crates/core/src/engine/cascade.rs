//! Resumable flush/split cascade.
//!
//! A cascade starts from a frozen copy of the root buffer and a private copy
//! of the s-tree. It flushes records down, splits s-nodes that overflow and
//! keeps every extent it replaces in `retired` until the caller commits the
//! new tree. Work is done in small ticks so it can either run to completion
//! at once or be spread over later inserts with a page budget per step.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::dtree::{
    resolve_alone, tree_pages, Built, DTree, DTreeBuilder, Io, Layout, LeafCursor, LiveStart,
    MemSource, Merge, RootBuffer, SortedSource,
};
use crate::error::Result;
use crate::pager::{Cursor, Extent};
use crate::types::{Config, DeltaRecord, Key, Mode};

use super::stree::{NodeData, NodeId, SNode, STree, SplitResult};

pub(crate) fn disk_data(b: Built) -> NodeData {
    let bloom = if b.tree.is_empty() { None } else { Some(Arc::new(b.bloom)) };
    NodeData::Disk { tree: b.tree, bloom }
}

// ---------------------------------------------------------------------------
// Record sources
// ---------------------------------------------------------------------------

enum Source {
    Mem(MemSource),
    Disk(LeafCursor),
}

impl<'a> SortedSource<Io<'a>> for Source {
    fn peek(&mut self, cx: &mut Io<'a>) -> Result<Option<&DeltaRecord>> {
        match self {
            Source::Mem(m) => m.peek(cx),
            Source::Disk(c) => c.peek(cx),
        }
    }

    fn next_record(&mut self, cx: &mut Io<'a>) -> Result<Option<DeltaRecord>> {
        match self {
            Source::Mem(m) => m.next_record(cx),
            Source::Disk(c) => c.next_record(cx),
        }
    }
}

/// Parent records below `upper`, at most `quota` of them.
struct Bounded<'s> {
    src: &'s mut Source,
    upper: Option<&'s Key>,
    quota: &'s mut u64,
}

impl<'a> SortedSource<Io<'a>> for Bounded<'_> {
    fn peek(&mut self, cx: &mut Io<'a>) -> Result<Option<&DeltaRecord>> {
        if *self.quota == 0 {
            return Ok(None);
        }
        let upper = self.upper;
        match self.src.peek(cx)? {
            Some(r) if upper.is_none_or(|u| &r.key < u) => Ok(Some(r)),
            _ => Ok(None),
        }
    }

    fn next_record(&mut self, cx: &mut Io<'a>) -> Result<Option<DeltaRecord>> {
        if self.peek(cx)?.is_none() {
            return Ok(None);
        }
        *self.quota -= 1;
        self.src.next_record(cx)
    }
}

// ---------------------------------------------------------------------------
// Jobs
// ---------------------------------------------------------------------------

struct ChildMerge {
    child: NodeId,
    upper: Option<Key>,
    older: LeafCursor,
    builder: DTreeBuilder,
    at_leaf: bool,
    last: Option<Key>,
}

struct FlushState {
    parent: Source,
    quota: u64,
    moved: u64,
    child_idx: usize,
    merge: Option<ChildMerge>,
}

struct RewriteJob {
    src: LeafCursor,
    builder: DTreeBuilder,
}

enum SplitRule {
    /// The first n records go left.
    Count(u64),
    /// Records below the key go left.
    Key(Key),
}

struct SplitJob {
    src: Source,
    rule: SplitRule,
    total: u64,
    taken: u64,
    builder: Option<DTreeBuilder>,
    left: Option<Built>,
    median: Option<Key>,
}

impl SplitJob {
    fn new(src: Source, rule: SplitRule, total: u64) -> Self {
        SplitJob { src, rule, total, taken: 0, builder: None, left: None, median: None }
    }

    /// Advances by one record; returns both halves and the first right key once done.
    fn tick(&mut self, io: &mut Io<'_>) -> Result<Option<(Built, Built, Option<Key>)>> {
        if self.builder.is_none() {
            let bound = match (&self.rule, &self.left) {
                (SplitRule::Count(n), None) => *n,
                _ => self.total - self.taken,
            };
            self.builder = Some(DTreeBuilder::new(io, bound)?);
        }
        let goes_right = match self.src.peek(io)? {
            None => None,
            Some(r) => Some(match &self.rule {
                SplitRule::Count(n) => self.taken >= *n,
                SplitRule::Key(k) => &r.key >= k,
            }),
        };
        match goes_right {
            None => {
                let done = self.builder.take().expect("builder present").finish(io)?;
                let (left, right) = match self.left.take() {
                    None => {
                        let right = DTreeBuilder::new(io, 0)?.finish(io)?;
                        (done, right)
                    }
                    Some(left) => (left, done),
                };
                Ok(Some((left, right, self.median.take())))
            }
            Some(true) if self.left.is_none() => {
                let median = self.src.peek(io)?.map(|r| r.key.clone());
                self.median = median;
                self.left = Some(self.builder.take().expect("builder present").finish(io)?);
                Ok(None)
            }
            Some(_) => {
                let rec = self.src.next_record(io)?.expect("peeked");
                self.builder.as_mut().expect("builder present").push(&rec, io)?;
                self.taken += 1;
                Ok(None)
            }
        }
    }
}

enum Step {
    Start,
    Flush(Box<FlushState>),
    Rewrite(Box<RewriteJob>),
    PickChildren,
    Children(VecDeque<NodeId>),
    Await { child: NodeId, rest: VecDeque<NodeId> },
    Split(Box<SplitJob>),
    Return(Option<SplitResult>),
}

struct Frame {
    node: NodeId,
    step: Step,
}

// ---------------------------------------------------------------------------
// Cascade
// ---------------------------------------------------------------------------

pub(crate) struct Cascade {
    pub work: STree,
    pub frozen: Arc<RootBuffer>,
    root_rest: Vec<DeltaRecord>,
    frames: Vec<Frame>,
    returned: Option<Option<SplitResult>>,
    pub retired: Vec<Extent>,
    /// Upper bound on the pages this cascade reads and writes.
    pub estimate: u64,
    pub pages_done: u64,
    /// First page allocated by this cascade; everything at or after it is ours.
    pub alloc_mark: u64,
    sigma: u64,
    fanout: usize,
    mode: Mode,
    finished: bool,
}

impl Cascade {
    pub fn stage(
        work: STree,
        frozen: RootBuffer,
        config: &Config,
        layout: &Layout,
        alloc_mark: u64,
    ) -> Self {
        let root_rest: Vec<DeltaRecord> = frozen.iter().cloned().collect();
        let estimate = estimate_pages(&work, root_rest.len() as u64, config, layout);
        let root = work.root;
        Cascade {
            work,
            frozen: Arc::new(frozen),
            root_rest,
            frames: vec![Frame { node: root, step: Step::Start }],
            returned: None,
            retired: Vec::new(),
            estimate,
            pages_done: 0,
            alloc_mark,
            sigma: config.sigma as u64,
            fanout: config.stree_fanout,
            mode: config.mode,
            finished: false,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Pages each insert must pay so the cascade ends within σ inserts.
    pub fn step_budget(&self) -> u64 {
        self.estimate.div_ceil(self.sigma).max(1)
    }

    /// Runs until finished or until `budget` pages were transferred in this call.
    pub fn run(&mut self, io: &mut Io<'_>, budget: Option<u64>) -> Result<u64> {
        let start = io.stats.counts().pages();
        while !self.finished {
            if budget.is_some_and(|b| io.stats.counts().pages() - start >= b) {
                break;
            }
            self.tick(io)?;
        }
        let done = io.stats.counts().pages() - start;
        self.pages_done += done;
        Ok(done)
    }

    /// Consumes a finished cascade: the new tree and the root records that stay
    /// above the s-tree.
    pub fn into_result(self) -> (STree, Vec<DeltaRecord>, Vec<Extent>) {
        debug_assert!(self.finished);
        (self.work, self.root_rest, self.retired)
    }

    fn retire(&mut self, data: &NodeData) {
        if let NodeData::Disk { tree, .. } = data {
            if let Some(e) = tree.extent {
                self.retired.push(e);
            }
        }
    }

    fn replace_data(&mut self, id: NodeId, data: NodeData) {
        let old = std::mem::replace(&mut self.work.node_mut(id).data, data);
        self.retire(&old);
    }

    fn tick(&mut self, io: &mut Io<'_>) -> Result<()> {
        let Some(mut frame) = self.frames.pop() else {
            self.finished = true;
            return Ok(());
        };
        let id = frame.node;
        let step = std::mem::replace(&mut frame.step, Step::Start);
        frame.step = match step {
            Step::Start => {
                if self.work.node(id).is_leaf() {
                    self.start_leaf_split(id)
                } else {
                    Step::Flush(Box::new(self.start_flush(id)))
                }
            }
            Step::Flush(mut fs) => {
                if self.flush_tick(id, &mut fs, io)? {
                    self.end_flush(id, *fs, io)?
                } else {
                    Step::Flush(fs)
                }
            }
            Step::Rewrite(mut job) => match job.src.next_record(io)? {
                Some(rec) => {
                    job.builder.push(&rec, io)?;
                    Step::Rewrite(job)
                }
                None => {
                    let built = job.builder.finish(io)?;
                    self.replace_data(id, disk_data(built));
                    Step::PickChildren
                }
            },
            Step::PickChildren => Step::Children(self.pick_children(id)),
            Step::Children(mut queue) => match queue.pop_front() {
                Some(child) => {
                    frame.step = Step::Await { child, rest: queue };
                    self.frames.push(frame);
                    self.frames.push(Frame { node: child, step: Step::Start });
                    return Ok(());
                }
                None => {
                    if self.work.node(id).children.len() > self.fanout {
                        self.start_self_split(id)
                    } else {
                        Step::Return(None)
                    }
                }
            },
            Step::Await { child, rest } => {
                let res = self.returned.take().expect("child frame returned");
                if let Some(split) = res {
                    let node = self.work.node_mut(id);
                    let i = node
                        .children
                        .iter()
                        .position(|&c| c == child)
                        .expect("awaited child is linked");
                    node.children[i] = split.left;
                    node.children.insert(i + 1, split.right);
                    node.s_keys.insert(i, split.median);
                }
                Step::Children(rest)
            }
            Step::Split(mut job) => match job.tick(io)? {
                None => Step::Split(job),
                Some((left, right, median)) => Step::Return(Some(self.finish_split(id, left, right, median))),
            },
            Step::Return(res) => {
                if self.frames.is_empty() {
                    if let Some(split) = res {
                        let root = SNode {
                            s_keys: vec![split.median],
                            children: vec![split.left, split.right],
                            data: NodeData::Buffer,
                        };
                        self.work.root = self.work.add(root);
                    }
                    self.finished = true;
                } else {
                    self.returned = Some(res);
                }
                return Ok(());
            }
        };
        self.frames.push(frame);
        Ok(())
    }

    // -- flush ---------------------------------------------------------------

    fn start_flush(&mut self, id: NodeId) -> FlushState {
        let parent = if id == self.work.root {
            Source::Mem(MemSource::new(std::mem::take(&mut self.root_rest)))
        } else {
            let tree = self.work.node(id).dtree().cloned().unwrap_or_default();
            Source::Disk(LeafCursor::new(&tree, None, None, Cursor::A))
        };
        FlushState { parent, quota: self.sigma, moved: 0, child_idx: 0, merge: None }
    }

    /// One unit of flush work. Returns true when the flush is complete.
    fn flush_tick(&mut self, id: NodeId, fs: &mut FlushState, io: &mut Io<'_>) -> Result<bool> {
        if let Some(cm) = fs.merge.as_mut() {
            let before = fs.quota;
            let newer = Bounded { src: &mut fs.parent, upper: cm.upper.as_ref(), quota: &mut fs.quota };
            let mut m = Merge::resume(newer, &mut cm.older, cm.at_leaf, cm.last.take());
            let r = m.step(io);
            cm.last = m.into_last_key();
            fs.moved += before - fs.quota;
            match r? {
                None => {
                    let cm = fs.merge.take().expect("merge present");
                    let built = cm.builder.finish(io)?;
                    self.replace_data(cm.child, disk_data(built));
                    fs.child_idx += 1;
                }
                Some(Some(rec)) => cm.builder.push(&rec, io)?,
                Some(None) => {}
            }
            return Ok(false);
        }
        let node = self.work.node(id);
        if fs.child_idx >= node.children.len() || fs.quota == 0 {
            return Ok(true);
        }
        let upper = node.s_keys.get(fs.child_idx).cloned();
        let Some(pk) = fs.parent.peek(io)? else {
            return Ok(true);
        };
        if upper.as_ref().is_some_and(|u| &pk.key >= u) {
            fs.child_idx += 1;
            return Ok(false);
        }
        let child = node.children[fs.child_idx];
        let cn = self.work.node(child);
        let tree = cn.dtree().cloned().unwrap_or_default();
        let builder = DTreeBuilder::new(io, fs.quota + tree.record_count)?;
        fs.merge = Some(ChildMerge {
            child,
            upper,
            older: LeafCursor::new(&tree, None, None, Cursor::B),
            builder,
            at_leaf: cn.is_leaf(),
            last: None,
        });
        Ok(false)
    }

    fn end_flush(&mut self, id: NodeId, fs: FlushState, io: &mut Io<'_>) -> Result<Step> {
        let FlushState { parent, moved, .. } = fs;
        let mut cur = match parent {
            Source::Mem(src) => {
                self.root_rest = src.into_rest();
                return Ok(Step::PickChildren);
            }
            Source::Disk(cur) => cur,
        };
        if moved == 0 {
            return Ok(Step::PickChildren);
        }
        let tree = self.work.node(id).dtree().cloned().expect("non-root node has a d-tree");
        let remaining = tree.record_count - moved;
        if remaining == 0 {
            self.replace_data(id, NodeData::Disk { tree: DTree::empty(), bloom: None });
            return Ok(Step::PickChildren);
        }
        match self.mode {
            Mode::Advanced => {
                let key = cur.peek(io)?.expect("unmoved records remain").key.clone();
                let live_start = LiveStart { key, leaf: cur.current_leaf() };
                if let NodeData::Disk { tree, .. } = &mut self.work.node_mut(id).data {
                    tree.live_start = Some(live_start);
                    tree.record_count = remaining;
                }
                Ok(Step::PickChildren)
            }
            Mode::Basic => {
                let builder = DTreeBuilder::new(io, remaining)?;
                Ok(Step::Rewrite(Box::new(RewriteJob { src: cur, builder })))
            }
        }
    }

    fn pick_children(&self, id: NodeId) -> VecDeque<NodeId> {
        let node = self.work.node(id);
        let kids: Vec<(NodeId, u64)> =
            node.children.iter().map(|&c| (c, self.work.node(c).live())).collect();
        let children_are_leaves = self.work.node(kids[0].0).is_leaf();
        match self.mode {
            Mode::Advanced if !children_are_leaves => {
                let (best, live) = kids
                    .iter()
                    .copied()
                    .fold(kids[0], |acc, k| if k.1 > acc.1 { k } else { acc });
                if live > self.sigma {
                    VecDeque::from([best])
                } else {
                    VecDeque::new()
                }
            }
            _ => kids.iter().filter(|k| k.1 > self.sigma).map(|k| k.0).collect(),
        }
    }

    // -- splits --------------------------------------------------------------

    fn start_leaf_split(&mut self, id: NodeId) -> Step {
        if id == self.work.root {
            let kept: Vec<DeltaRecord> = std::mem::take(&mut self.root_rest)
                .into_iter()
                .filter_map(|r| resolve_alone(r, true))
                .collect();
            let total = kept.len() as u64;
            if total <= self.sigma {
                self.root_rest = kept;
                return Step::Return(None);
            }
            let src = Source::Mem(MemSource::new(kept));
            return Step::Split(Box::new(SplitJob::new(src, SplitRule::Count(total / 2), total)));
        }
        let tree = self.work.node(id).dtree().cloned().unwrap_or_default();
        let total = tree.record_count;
        if total <= self.sigma {
            return Step::Return(None);
        }
        let src = Source::Disk(LeafCursor::new(&tree, None, None, Cursor::A));
        Step::Split(Box::new(SplitJob::new(src, SplitRule::Count(total / 2), total)))
    }

    fn start_self_split(&mut self, id: NodeId) -> Step {
        let node = self.work.node(id);
        let median = node.s_keys[node.s_keys.len() / 2].clone();
        let (src, total) = if id == self.work.root {
            let rest = std::mem::take(&mut self.root_rest);
            let n = rest.len() as u64;
            (Source::Mem(MemSource::new(rest)), n)
        } else {
            let tree = node.dtree().cloned().unwrap_or_default();
            let n = tree.record_count;
            (Source::Disk(LeafCursor::new(&tree, None, None, Cursor::A)), n)
        };
        Step::Split(Box::new(SplitJob::new(src, SplitRule::Key(median), total)))
    }

    fn finish_split(&mut self, id: NodeId, left: Built, right: Built, first_right: Option<Key>) -> SplitResult {
        let old = self.work.remove(id);
        self.retire(&old.data);
        if old.is_leaf() {
            let median = first_right.expect("leaf split has a non-empty right half");
            let left = self.work.add(SNode::leaf(disk_data(left)));
            let right = self.work.add(SNode::leaf(disk_data(right)));
            return SplitResult { median, left, right };
        }
        let mid = old.s_keys.len() / 2;
        let mut s_keys = old.s_keys;
        let mut children = old.children;
        let right_keys = s_keys.split_off(mid + 1);
        let median = s_keys.pop().expect("median key");
        let right_children = children.split_off(mid + 1);
        let left = self.work.add(SNode { s_keys, children, data: disk_data(left) });
        let right =
            self.work.add(SNode { s_keys: right_keys, children: right_children, data: disk_data(right) });
        SplitResult { median, left, right }
    }
}

// ---------------------------------------------------------------------------
// Work estimate
// ---------------------------------------------------------------------------

struct Est<'a> {
    work: &'a STree,
    layout: &'a Layout,
    sigma: u64,
    fanout: usize,
    mode: Mode,
}

impl Est<'_> {
    /// Pages read when streaming `r` live records that may start mid-leaf.
    fn scan(&self, r: u64) -> u64 {
        if r == 0 {
            0
        } else {
            r.div_ceil(self.layout.leaf_records as u64) + 2
        }
    }

    fn build(&self, r: u64) -> u64 {
        tree_pages(r, self.layout)
    }

    /// Extra pages from building one tree of a+b records instead of two.
    fn slack(&self, r: u64) -> u64 {
        let mut levels = 0;
        let mut n = r.div_ceil(self.layout.leaf_records as u64);
        while n > 1 {
            n = n.div_ceil(self.layout.fanout as u64);
            levels += 1;
        }
        levels + 2
    }

    fn split(&self, r: u64) -> u64 {
        self.scan(r) + 2 * self.build(r.div_ceil(2)) + 2
    }

    fn node(&self, id: NodeId, live: u64, is_root: bool) -> u64 {
        let node = self.work.node(id);
        if node.is_leaf() {
            return if live > self.sigma { self.split(live) } else { 0 };
        }
        let moved = live.min(self.sigma);
        let mut w = if is_root { 0 } else { self.scan(moved) };
        let mut grow = 0u64;
        let mut child_work = 0u64;
        let mut worst_child = 0u64;
        for &c in &node.children {
            let cn = self.work.node(c);
            let cl = cn.live();
            w += self.scan(cl) + self.build(cl) + self.slack(cl + moved);
            if cl + moved > self.sigma {
                if cn.is_leaf() {
                    child_work += self.split(cl) + self.slack(cl + moved);
                    grow += 1;
                } else {
                    let sub = self.node(c, cl + moved, false);
                    child_work += sub;
                    worst_child = worst_child.max(sub);
                    grow = grow.max(1);
                    if self.mode == Mode::Basic {
                        grow = node.children.len() as u64;
                    }
                }
            }
        }
        w += self.build(moved);
        if self.mode == Mode::Basic && !is_root {
            w += self.scan(live) + self.build(live - moved);
        }
        let leaf_children = self.work.node(node.children[0]).is_leaf();
        w += if self.mode == Mode::Advanced && !leaf_children {
            worst_child
        } else {
            child_work + if leaf_children { self.split(moved) } else { 0 }
        };
        if node.children.len() as u64 + grow > self.fanout as u64 {
            w += self.scan(live) + 2 * self.build(live) + 2;
        }
        w
    }
}

/// Pessimistic page count for a cascade over `work` whose root holds `root_records`.
pub(crate) fn estimate_pages(work: &STree, root_records: u64, config: &Config, layout: &Layout) -> u64 {
    let e = Est {
        work,
        layout,
        sigma: config.sigma as u64,
        fanout: config.stree_fanout,
        mode: config.mode,
    };
    e.node(work.root, root_records, true)
}
