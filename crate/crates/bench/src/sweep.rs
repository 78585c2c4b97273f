//! One insert-then-query run per parameter value.

use std::io::Write;

use anyhow::{bail, Result};
use nbtree::{Config, NBTree};

use crate::runner::{Aggregates, RunOptions, Runner};
use crate::workload::{generate_workload, WorkloadSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// s-tree fanout
    F,
    /// records per d-tree
    Sigma,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::F => "f",
            SweepParam::Sigma => "sigma",
        }
    }

    pub fn apply(&self, base: &Config, value: usize) -> Config {
        match self {
            SweepParam::F => Config { stree_fanout: value, ..base.clone() },
            SweepParam::Sigma => Config { sigma: value, ..base.clone() },
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f" | "fanout" => Ok(SweepParam::F),
            "sigma" => Ok(SweepParam::Sigma),
            _ => bail!("unknown sweep parameter {s:?} (expected f or sigma)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<usize>,
    pub base: Config,
    pub n_inserts: u64,
    pub n_queries: u64,
    pub seed: u64,
    /// Bytes available for root buffers; runs needing more are flagged.
    pub memory_budget_bytes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub buffer_bytes: usize,
    pub within_budget: bool,
    pub agg: Aggregates,
}

/// Root buffer memory: the active buffer, plus the frozen one while deamortizing.
pub fn buffer_bytes(c: &Config) -> usize {
    let copies = if c.deamortize { 2 } else { 1 };
    copies * c.sigma * c.record_bytes()
}

pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.values.len() < 2 {
        bail!("a sweep needs at least two values, got {}", spec.values.len());
    }
    let b = &spec.base;
    let inserts = generate_workload(&WorkloadSpec::inserts(spec.n_inserts, spec.seed, b.key_bytes, b.value_bytes))?;
    let queries = generate_workload(&WorkloadSpec::queries(
        spec.n_queries,
        spec.n_inserts,
        spec.seed,
        b.key_bytes,
        b.value_bytes,
    ))?;
    let mut rows = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let config = spec.param.apply(b, value);
        let mut runner = Runner::new(NBTree::in_memory(config.clone())?, RunOptions::default());
        let mut agg = runner.execute(&inserts, None)?.agg;
        let q = runner.execute(&queries, None)?.agg;
        agg.query_wall = q.query_wall;
        agg.query_modeled = q.query_modeled;
        agg.pages_read += q.pages_read;
        agg.pages_written += q.pages_written;
        agg.seeks += q.seeks;
        let bytes = buffer_bytes(&config);
        rows.push(SweepRow {
            value,
            buffer_bytes: bytes,
            within_budget: spec.memory_budget_bytes.is_none_or(|m| bytes <= m),
            agg,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(param: SweepParam, rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        param.name(),
        "buffer_bytes",
        "within_budget",
        "avg_insert_wall_ns",
        "max_insert_wall_ns",
        "avg_query_wall_ns",
        "max_query_wall_ns",
        "avg_insert_modeled_ns",
        "max_insert_modeled_ns",
        "avg_query_modeled_ns",
        "max_query_modeled_ns",
    ])?;
    for r in rows {
        let a = &r.agg;
        w.write_record([
            r.value.to_string(),
            r.buffer_bytes.to_string(),
            r.within_budget.to_string(),
            a.insert_wall.avg().to_string(),
            a.insert_wall.max.to_string(),
            a.query_wall.avg().to_string(),
            a.query_wall.max.to_string(),
            a.insert_modeled.avg().to_string(),
            a.insert_modeled.max.to_string(),
            a.query_modeled.avg().to_string(),
            a.query_modeled.max.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(values: Vec<usize>) -> SweepSpec {
        SweepSpec {
            param: SweepParam::F,
            values,
            base: Config { sigma: 64, value_bytes: 16, dtree_fanout: 16, ..Config::default() },
            n_inserts: 2_000,
            n_queries: 100,
            seed: 1,
            memory_budget_bytes: None,
        }
    }

    #[test]
    fn single_value_is_rejected() {
        assert!(sweep(&spec(vec![3])).is_err());
        assert!(sweep(&spec(vec![])).is_err());
    }

    #[test]
    fn one_row_per_value() {
        let rows = sweep(&spec(vec![3, 4])).unwrap();
        assert_eq!(rows.iter().map(|r| r.value).collect::<Vec<_>>(), vec![3, 4]);
        assert!(rows.iter().all(|r| r.agg.insert_modeled.count == 2_000 && r.agg.query_modeled.count == 100));
        let mut out = Vec::new();
        write_sweep_csv(SweepParam::F, &rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }

    #[test]
    fn budget_flags_large_buffers() {
        let mut s = spec(vec![64, 128]);
        s.param = SweepParam::Sigma;
        s.memory_budget_bytes = Some(64 * s.base.record_bytes());
        let rows = sweep(&s).unwrap();
        assert!(rows[0].within_budget);
        assert!(!rows[1].within_budget);
    }
}
