//! Executes a workload against an index, one row of measurements per operation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use nbtree::{Config, CostParams, DeltaRecord, IoCounts, NBTree, OracleMap};

use crate::workload::{generate_workload, WorkOp, WorkloadKind, WorkloadSpec};

pub const CSV_HEADER: [&str; 7] =
    ["op_index", "op", "wall_ns", "pages_read", "pages_written", "seeks", "modeled_ns"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRow {
    pub op_index: u64,
    pub op: &'static str,
    pub wall_ns: u64,
    pub pages_read: u64,
    pub pages_written: u64,
    pub seeks: u64,
    pub modeled_ns: u64,
}

impl OpRow {
    fn record(&self) -> [String; 7] {
        [
            self.op_index.to_string(),
            self.op.to_string(),
            self.wall_ns.to_string(),
            self.pages_read.to_string(),
            self.pages_written.to_string(),
            self.seeks.to_string(),
            self.modeled_ns.to_string(),
        ]
    }
}

/// Modeled nanoseconds for a counter delta, rounded to the nearest ns.
pub fn modeled_ns(c: &IoCounts, cost: &CostParams) -> u64 {
    (c.modeled_time(cost).total() * 1e9).round() as u64
}

/// Count, sum and maximum of one column over a set of rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stat {
    pub count: u64,
    pub total: u128,
    pub max: u64,
}

impl Stat {
    pub fn add(&mut self, x: u64) {
        self.count += 1;
        self.total += x as u128;
        self.max = self.max.max(x);
    }

    /// total / count, or 0 for an empty set.
    pub fn avg(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total as f64 / self.count as f64
        }
    }
}

/// Writes (put, update, delete) count as inserts; queries separately.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Aggregates {
    pub insert_wall: Stat,
    pub insert_modeled: Stat,
    pub query_wall: Stat,
    pub query_modeled: Stat,
    pub pages_read: u64,
    pub pages_written: u64,
    pub seeks: u64,
}

impl Aggregates {
    pub fn add(&mut self, row: &OpRow) {
        if row.op == "query" {
            self.query_wall.add(row.wall_ns);
            self.query_modeled.add(row.modeled_ns);
        } else {
            self.insert_wall.add(row.wall_ns);
            self.insert_modeled.add(row.modeled_ns);
        }
        self.pages_read += row.pages_read;
        self.pages_written += row.pages_written;
        self.seeks += row.seeks;
    }

    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a OpRow>) -> Self {
        let mut a = Aggregates::default();
        for r in rows {
            a.add(r);
        }
        a
    }

    /// Same aggregates with the wall-clock columns cleared.
    pub fn modeled_only(&self) -> Self {
        Aggregates { insert_wall: Stat::default(), query_wall: Stat::default(), ..*self }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    /// Empty unless `RunOptions::keep_rows` is set.
    pub rows: Vec<OpRow>,
    pub agg: Aggregates,
    pub mismatches: u64,
    pub first_mismatch: Option<String>,
    pub validations: u64,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Check every query against an in-memory reference map.
    pub oracle: bool,
    /// Run `validate()` after every this many operations.
    pub checkpoint_every: Option<u64>,
    pub keep_rows: bool,
}

pub fn read_csv(path: &Path) -> Result<Vec<OpRow>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(CSV_HEADER.iter().copied()) {
        bail!("unexpected CSV header in {}", path.display());
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let n = |i: usize| -> Result<u64> { Ok(rec[i].parse()?) };
        let op = match &rec[1] {
            "put" => "put",
            "update" => "update",
            "delete" => "delete",
            "query" => "query",
            other => bail!("unknown op {other:?}"),
        };
        rows.push(OpRow {
            op_index: n(0)?,
            op,
            wall_ns: n(2)?,
            pages_read: n(3)?,
            pages_written: n(4)?,
            seeks: n(5)?,
            modeled_ns: n(6)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

pub type CsvSink = csv::Writer<Box<dyn Write>>;

pub fn csv_sink(path: &Path) -> Result<CsvSink> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(Box::new(BufWriter::new(f)) as Box<dyn Write>);
    w.write_record(CSV_HEADER)?;
    Ok(w)
}

/// Drives one index; keeps the reference map alive across successive phases.
pub struct Runner {
    pub tree: NBTree,
    oracle: Option<OracleMap>,
    oracle_seq: u64,
    opts: RunOptions,
    ops_done: u64,
}

impl Runner {
    pub fn new(tree: NBTree, opts: RunOptions) -> Self {
        let oracle = opts.oracle.then(OracleMap::new);
        Runner { tree, oracle, oracle_seq: 0, opts, ops_done: 0 }
    }

    pub fn oracle(&self) -> Option<&OracleMap> {
        self.oracle.as_ref()
    }

    /// Runs `ops`, streaming rows to `sink`. On an engine error the rows so far are
    /// flushed before the error is returned.
    pub fn execute(&mut self, ops: &[WorkOp], mut sink: Option<&mut CsvSink>) -> Result<RunReport> {
        let res = self.execute_inner(ops, sink.as_deref_mut());
        if let Some(s) = sink {
            s.flush()?;
        }
        res
    }

    fn execute_inner(&mut self, ops: &[WorkOp], mut sink: Option<&mut CsvSink>) -> Result<RunReport> {
        let cost = self.tree.config().cost;
        let mut report = RunReport::default();
        for (i, op) in ops.iter().enumerate() {
            let before = self.tree.io_counts();
            let start = Instant::now();
            let found = match op {
                WorkOp::Put(k, v) => self.tree.insert(k.clone(), v.clone()).map(|_| None),
                WorkOp::Update(k, v) => self.tree.update(k.clone(), v.clone()).map(|_| None),
                WorkOp::Delete(k) => self.tree.delete(k.clone()).map(|_| None),
                WorkOp::Query(k) => self.tree.get(k).map(Some),
            };
            let wall_ns = start.elapsed().as_nanos() as u64;
            let found = found.with_context(|| format!("op {i} ({})", op.name()))?;
            let d = self.tree.io_counts().since(&before);
            let row = OpRow {
                op_index: i as u64,
                op: op.name(),
                wall_ns,
                pages_read: d.pages_read,
                pages_written: d.pages_written,
                seeks: d.seeks,
                modeled_ns: modeled_ns(&d, &cost),
            };
            report.agg.add(&row);
            if let Some(s) = sink.as_deref_mut() {
                s.write_record(row.record())?;
            }
            if self.opts.keep_rows {
                report.rows.push(row);
            }

            if let Some(o) = self.oracle.as_mut() {
                self.oracle_seq += 1;
                let seq = self.oracle_seq;
                match op {
                    WorkOp::Put(k, v) => o.apply(&DeltaRecord::put(k.clone(), v.clone(), seq)),
                    WorkOp::Update(k, v) => o.apply(&DeltaRecord::update(k.clone(), v.clone(), seq)),
                    WorkOp::Delete(k) => o.apply(&DeltaRecord::delete(k.clone(), seq)),
                    WorkOp::Query(k) => {
                        let want = o.get(k);
                        let got = found.flatten();
                        if got.as_ref() != want {
                            report.mismatches += 1;
                            report.first_mismatch.get_or_insert_with(|| {
                                format!("op {i}: key {:?} returned {:?}, expected {:?}", k, got, want)
                            });
                        }
                    }
                }
            }

            self.ops_done += 1;
            if let Some(every) = self.opts.checkpoint_every {
                if every > 0 && self.ops_done.is_multiple_of(every) {
                    let v = self.tree.validate()?;
                    report.validations += 1;
                    if let Some(msg) = v.violation {
                        bail!("validation failed after {} ops: {msg}", self.ops_done);
                    }
                }
            }
        }
        Ok(report)
    }
}

/// Opens the index for a run: in memory when `dir` is None, else the stored
/// index in `dir` (created when absent).
pub fn open_index(config: &Config, dir: Option<&Path>) -> Result<NBTree> {
    Ok(match dir {
        Some(d) => NBTree::open(d, config.clone())
            .with_context(|| format!("opening index in {}", d.display()))?,
        None => NBTree::in_memory(config.clone())?,
    })
}

/// Generates the workload for `spec` and runs it. Query workloads first load
/// the keys they target into a new index; their rows cover the queries only.
pub fn run(
    spec: &WorkloadSpec,
    config: &Config,
    dir: Option<&Path>,
    out: Option<&Path>,
    opts: &RunOptions,
) -> Result<RunReport> {
    let ops = generate_workload(spec)?;
    let tree = open_index(config, dir)?;
    let fresh = tree.seq() == 0;
    let mut runner = Runner::new(tree, opts.clone());
    if spec.kind == WorkloadKind::Query {
        let base = WorkloadSpec::inserts(spec.existing, spec.seed, spec.key_bytes, spec.value_bytes);
        let preload = generate_workload(&base)?;
        if fresh {
            let keep = std::mem::replace(&mut runner.opts.keep_rows, false);
            runner.execute(&preload, None)?;
            runner.opts.keep_rows = keep;
        } else if runner.oracle.is_some() {
            bail!("--oracle needs a fresh index for query runs");
        }
    }
    let mut sink = out.map(csv_sink).transpose()?;
    let report = runner.execute(&ops, sink.as_mut())?;
    if dir.is_some() {
        runner.tree.close()?;
    }
    Ok(report)
}
