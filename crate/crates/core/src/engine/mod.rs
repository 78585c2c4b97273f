//! The NB-tree itself: insert path, cascades, queries, snapshots and persistence.

mod cascade;
mod manifest;
mod query;
mod stree;
mod validate;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::dtree::{Io, Layout, LeafCursor, RootBuffer};
use crate::error::{Error, Result};
use crate::pager::{Cursor, IoCounts, IoStats, Pager};
use crate::types::{Config, DeltaRecord, Key, KeyRange, Op, Value};

use cascade::Cascade;
pub use query::{QueryTrace, RangeIter};
use query::View;
pub use stree::{NodeData, NodeId, SNode, STree, SplitResult};
pub use validate::ValidationReport;

/// Running totals kept by the engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineCounters {
    pub cascades: u64,
    /// Cascades that had to be finished synchronously because the next one was due.
    pub forced_drains: u64,
    /// Cascades whose page traffic exceeded their up-front estimate.
    pub estimate_overruns: u64,
    pub max_estimate_pages: u64,
    /// Most pages moved by one deamortized step.
    pub max_step_pages: u64,
}

/// Heights of the two tree layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub stree_height: u32,
    pub max_dtree_height: u32,
    pub snodes: usize,
}

/// Materialized view of one s-node for printing and tests.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeDump {
    pub s_keys: Vec<Key>,
    pub records: Vec<DeltaRecord>,
    pub children: Vec<NodeDump>,
}

impl NodeDump {
    pub fn keys(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.key.to_u64()).collect()
    }

    fn fmt_indent(&self, f: &mut std::fmt::Formatter<'_>, depth: usize) -> std::fmt::Result {
        let s: Vec<u64> = self.s_keys.iter().map(|k| k.to_u64()).collect();
        writeln!(f, "{:indent$}s-keys {:?} d-tree {:?}", "", s, self.keys(), indent = depth * 2)?;
        for c in &self.children {
            c.fmt_indent(f, depth + 1)?;
        }
        Ok(())
    }
}

impl std::fmt::Display for NodeDump {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.fmt_indent(f, 0)
    }
}

pub struct NBTree {
    config: Config,
    layout: Layout,
    pager: Arc<Pager>,
    stats: IoStats,
    seq: u64,
    committed: Arc<STree>,
    active: RootBuffer,
    cascade: Option<Cascade>,
    has_deletes: bool,
    dir: Option<PathBuf>,
    checkpointing: bool,
    counters: EngineCounters,
    /// Set when a cascade failed and its records went back to the active buffer.
    overfull: bool,
}

impl NBTree {
    pub fn in_memory(config: Config) -> Result<Self> {
        config.validate()?;
        let pager = Arc::new(Pager::in_memory(config.page_bytes));
        Ok(Self::fresh(config, pager, None))
    }

    /// In-memory index whose page store refuses to grow past `max_pages`.
    pub fn in_memory_bounded(config: Config, max_pages: u64) -> Result<Self> {
        config.validate()?;
        let pager = Arc::new(Pager::in_memory_bounded(config.page_bytes, max_pages));
        Ok(Self::fresh(config, pager, None))
    }

    /// Opens the index stored in directory `path`, creating it when absent.
    pub fn open(path: &Path, config: Config) -> Result<Self> {
        config.validate()?;
        let manifest = path.join(manifest::MANIFEST);
        if manifest.exists() {
            return manifest::load(path, config);
        }
        std::fs::create_dir_all(path)?;
        let pager = Arc::new(Pager::create_file(&path.join(manifest::PAGES), config.page_bytes)?);
        let mut t = Self::fresh(config, pager, Some(path.to_path_buf()));
        t.checkpointing = true;
        t.checkpoint()?;
        Ok(t)
    }

    /// Opens an existing index using the configuration recorded in its manifest.
    pub fn open_existing(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path.join(manifest::MANIFEST))?;
        let config = manifest::stored_config(&bytes)?;
        config.validate()?;
        manifest::load(path, config)
    }

    fn fresh(config: Config, pager: Arc<Pager>, dir: Option<PathBuf>) -> Self {
        NBTree {
            layout: Layout::from_config(&config),
            stats: IoStats::new(config.read_heads),
            config,
            pager,
            seq: 0,
            committed: Arc::new(STree::new()),
            active: RootBuffer::new(),
            cascade: None,
            has_deletes: false,
            dir,
            checkpointing: false,
            counters: EngineCounters::default(),
            overfull: false,
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn pager(&self) -> &Arc<Pager> {
        &self.pager
    }

    pub fn stats(&self) -> &IoStats {
        &self.stats
    }

    pub fn io_counts(&self) -> IoCounts {
        self.stats.counts()
    }

    pub fn counters(&self) -> EngineCounters {
        self.counters
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn has_pending_cascade(&self) -> bool {
        self.cascade.is_some()
    }

    /// Records held in the root buffers (active plus any frozen one being pushed down).
    pub fn buffered(&self) -> usize {
        self.active.len() + self.cascade.as_ref().map_or(0, |c| c.frozen.len())
    }

    pub fn shape(&self) -> Shape {
        Shape {
            stree_height: self.committed.height(),
            max_dtree_height: self.committed.max_dtree_height(),
            snodes: self.committed.live_ids().count(),
        }
    }

    /// Whether every committed cascade is written to the manifest (file-backed only).
    pub fn set_checkpointing(&mut self, on: bool) {
        self.checkpointing = on;
    }

    // -- writes --------------------------------------------------------------

    pub fn insert(&mut self, key: Key, value: Value) -> Result<()> {
        self.apply(key, Op::Put(value))
    }

    pub fn delete(&mut self, key: Key) -> Result<()> {
        self.apply(key, Op::Delete)
    }

    pub fn update(&mut self, key: Key, value: Value) -> Result<()> {
        self.apply(key, Op::Update(value))
    }

    pub fn apply(&mut self, key: Key, op: Op) -> Result<()> {
        if key.len() != self.config.key_bytes {
            return Err(Error::KeyLength { expected: self.config.key_bytes, got: key.len() });
        }
        if let Some(v) = op.value() {
            if v.len() != self.config.value_bytes {
                return Err(Error::ValueLength { expected: self.config.value_bytes, got: v.len() });
            }
        }
        if self.config.deamortize && self.cascade.is_some() {
            self.deamortize_step()?;
        }
        if matches!(op, Op::Delete) {
            self.has_deletes = true;
        }
        self.seq += 1;
        let prev = self.active.get(&key).cloned();
        let n = self.active.insert(DeltaRecord { key: key.clone(), op, seq: self.seq });
        if n > self.config.sigma {
            let res = if self.cascade.is_some() {
                self.counters.forced_drains += 1;
                self.finish_pending()
            } else {
                Ok(())
            };
            if let Err(e) = res.and_then(|_| self.stage_while_full()) {
                if self.active.get(&key).is_some_and(|r| r.seq == self.seq) {
                    self.active.restore(&key, prev);
                }
                return Err(e);
            }
        }
        Ok(())
    }

    fn stage_while_full(&mut self) -> Result<()> {
        while self.cascade.is_none() && self.active.len() > self.config.sigma {
            let frozen = std::mem::take(&mut self.active);
            let mark = self.pager.next_page();
            let c = Cascade::stage((*self.committed).clone(), frozen, &self.config, &self.layout, mark);
            self.counters.max_estimate_pages = self.counters.max_estimate_pages.max(c.estimate);
            self.cascade = Some(c);
            if self.config.deamortize {
                break;
            }
            self.finish_pending()?;
        }
        Ok(())
    }

    /// Performs one insert's share of the pending cascade. Returns pages moved.
    pub fn deamortize_step(&mut self) -> Result<u64> {
        let budget = match &self.cascade {
            Some(c) => c.step_budget(),
            None => return Ok(0),
        };
        let done = self.run_cascade(Some(budget))?;
        self.counters.max_step_pages = self.counters.max_step_pages.max(done);
        Ok(done)
    }

    /// Runs any pending cascade to completion.
    pub fn finish_pending(&mut self) -> Result<()> {
        if self.cascade.is_some() {
            self.run_cascade(None)?;
        }
        Ok(())
    }

    fn run_cascade(&mut self, budget: Option<u64>) -> Result<u64> {
        let c = self.cascade.as_mut().expect("pending cascade");
        let mut io = Io::new(&self.pager, &self.layout, &mut self.stats);
        let done = match c.run(&mut io, budget) {
            Ok(d) => d,
            Err(e) => {
                self.abort_cascade();
                return Err(e);
            }
        };
        if c.is_finished() {
            self.commit()?;
        }
        Ok(done)
    }

    /// Drops a failed cascade: its records go back into the active buffer and
    /// every extent it allocated is released.
    fn abort_cascade(&mut self) {
        let Some(c) = self.cascade.take() else { return };
        self.overfull = true;
        for r in c.frozen.iter() {
            self.active.absorb_older(r.clone());
        }
        for e in self.pager.live_extents() {
            if e.start >= c.alloc_mark {
                let _ = self.pager.free_extent(e);
            }
        }
    }

    fn commit(&mut self) -> Result<()> {
        let c = self.cascade.take().expect("pending cascade");
        if c.pages_done > c.estimate {
            self.counters.estimate_overruns += 1;
        }
        let (tree, leftover, retired) = c.into_result();
        self.committed = Arc::new(tree);
        for e in retired {
            self.pager.free_extent(e)?;
        }
        for r in leftover {
            self.active.absorb_older(r);
        }
        self.counters.cascades += 1;
        self.overfull = false;
        if self.checkpointing && self.dir.is_some() {
            self.checkpoint()?;
        }
        if self.active.len() > self.config.sigma {
            self.stage_while_full()?;
        }
        Ok(())
    }

    // -- reads ---------------------------------------------------------------

    fn view(&self) -> View<'_> {
        let mut buffers = vec![&self.active];
        if let Some(c) = &self.cascade {
            buffers.push(&c.frozen);
        }
        View { stree: &self.committed, buffers, pager: &self.pager, layout: &self.layout }
    }

    pub fn get(&mut self, key: &Key) -> Result<Option<Value>> {
        Ok(self.get_traced(key)?.0)
    }

    pub fn get_traced(&mut self, key: &Key) -> Result<(Option<Value>, QueryTrace)> {
        let mut stats = std::mem::replace(&mut self.stats, IoStats::new(1));
        let r = self.view().get(key, &mut stats);
        self.stats = stats;
        r
    }

    pub fn range(&mut self, range: &KeyRange) -> Result<Vec<(Key, Value)>> {
        let mut stats = std::mem::replace(&mut self.stats, IoStats::new(1));
        let view = self.view();
        let streams = view.range_streams(range);
        let r = RangeIter::new(streams, &self.pager, &self.layout, &mut stats).collect();
        self.stats = stats;
        r
    }

    /// Frozen view of the committed state; later writes do not affect it.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            stree: self.committed.clone(),
            active: Arc::new(self.active.clone()),
            frozen: self.cascade.as_ref().map(|c| c.frozen.clone()),
            pager: self.pager.clone(),
            layout: self.layout,
        }
    }

    /// Every live record, level by level, for display.
    pub fn dump(&self) -> Result<NodeDump> {
        let mut stats = IoStats::new(self.config.read_heads);
        let mut io = Io::new(&self.pager, &self.layout, &mut stats);
        let mut root = dump_node(&self.committed, self.committed.root, &mut io)?;
        let mut buffered: Vec<DeltaRecord> = self.active.iter().cloned().collect();
        if let Some(c) = &self.cascade {
            for r in c.frozen.iter() {
                if self.active.get(&r.key).is_none() {
                    buffered.push(r.clone());
                }
            }
            buffered.sort_by(|a, b| a.key.cmp(&b.key));
        }
        root.records = buffered;
        Ok(root)
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        validate::validate(self)
    }

    // -- persistence ---------------------------------------------------------

    /// Writes the manifest for the committed state, finishing pending work first.
    pub fn checkpoint(&mut self) -> Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        self.finish_pending()?;
        manifest::save(self)
    }

    /// Finishes pending work, persists and releases the index.
    pub fn close(mut self) -> Result<()> {
        self.finish_pending()?;
        if self.dir.is_some() {
            manifest::save(&self)?;
        }
        self.pager.sync()
    }
}

fn dump_node(t: &STree, id: NodeId, io: &mut Io<'_>) -> Result<NodeDump> {
    let node = t.node(id);
    let records = match node.dtree() {
        Some(tree) => LeafCursor::new(tree, None, None, Cursor::A).collect_all(io)?,
        None => Vec::new(),
    };
    let mut children = Vec::with_capacity(node.children.len());
    for &c in &node.children {
        children.push(dump_node(t, c, io)?);
    }
    Ok(NodeDump { s_keys: node.s_keys.clone(), records, children })
}

/// Point-in-time read view. Queries charge the caller's [`IoStats`].
#[derive(Clone)]
pub struct Snapshot {
    stree: Arc<STree>,
    active: Arc<RootBuffer>,
    frozen: Option<Arc<RootBuffer>>,
    pager: Arc<Pager>,
    layout: Layout,
}

impl Snapshot {
    fn view(&self) -> View<'_> {
        let mut buffers = vec![&*self.active];
        if let Some(f) = &self.frozen {
            buffers.push(f);
        }
        View { stree: &self.stree, buffers, pager: &self.pager, layout: &self.layout }
    }

    pub fn get(&self, key: &Key, stats: &mut IoStats) -> Result<Option<Value>> {
        Ok(self.view().get(key, stats)?.0)
    }

    pub fn get_traced(&self, key: &Key, stats: &mut IoStats) -> Result<(Option<Value>, QueryTrace)> {
        self.view().get(key, stats)
    }

    pub fn range_iter<'a>(&'a self, range: &KeyRange, stats: &'a mut IoStats) -> RangeIter<'a> {
        let streams = self.view().range_streams(range);
        RangeIter::new(streams, &self.pager, &self.layout, stats)
    }

    pub fn range(&self, range: &KeyRange, stats: &mut IoStats) -> Result<Vec<(Key, Value)>> {
        self.range_iter(range, stats).collect()
    }
}
