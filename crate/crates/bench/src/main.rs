use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nbtree::{Config, CostParams, Mode, NBTree};
use nbtree_bench::costreport::{write_cost_csv, CostInputs, Structure};
use nbtree_bench::runner::{run, RunOptions, RunReport};
use nbtree_bench::sweep::{sweep, write_sweep_csv, SweepParam, SweepSpec};
use nbtree_bench::trace::{render, trace_figure2};
use nbtree_bench::workload::{QuerySource, WorkloadSpec};

#[derive(Parser)]
#[command(name = "nbtree", version, about = "NB-tree benchmark and inspection tool")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a measured workload.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// One insert-then-query run per value of a parameter.
    Sweep(SweepArgs),
    /// Check every structural invariant of a stored index.
    Validate {
        #[arg(long, env = "NBTREE_DIR")]
        dir: PathBuf,
    },
    /// Print the structural trace of the small worked example.
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Closed-form cost table.
    Costmodel(CostArgs),
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Insert N unique uniform keys.
    Insert {
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Load N keys, then run point queries.
    Query {
        #[arg(long, default_value_t = 10_000)]
        n_queries: u64,
        /// Keys loaded before querying.
        #[arg(long)]
        n: u64,
        /// Query keys that were never inserted.
        #[arg(long)]
        absent: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Mixed puts, updates, deletes and queries (70:10:10:10).
    Mixed {
        #[arg(long)]
        n: u64,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Basic,
    Advanced,
}

#[derive(Args, Clone)]
struct IndexArgs {
    /// Records per d-tree.
    #[arg(long, default_value_t = 1024)]
    sigma: usize,
    /// Root buffer size in bytes; overrides --sigma with the number of records that fit.
    #[arg(long)]
    sigma_bytes: Option<usize>,
    /// s-tree fanout f
    #[arg(long, default_value_t = 3)]
    fanout: usize,
    /// d-tree fanout B
    #[arg(long, default_value_t = 256)]
    dtree_fanout: usize,
    #[arg(long, default_value_t = 4096)]
    page_bytes: usize,
    #[arg(long, default_value_t = 8)]
    key_bytes: usize,
    #[arg(long, default_value_t = 128)]
    value_bytes: usize,
    #[arg(long, value_enum, default_value = "advanced")]
    mode: ModeArg,
    #[arg(long)]
    deamortize: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl IndexArgs {
    fn config(&self) -> Config {
        let c = Config {
            page_bytes: self.page_bytes,
            dtree_fanout: self.dtree_fanout,
            stree_fanout: self.fanout,
            sigma: self.sigma,
            key_bytes: self.key_bytes,
            value_bytes: self.value_bytes,
            mode: match self.mode {
                ModeArg::Basic => Mode::Basic,
                ModeArg::Advanced => Mode::Advanced,
            },
            deamortize: self.deamortize,
            ..Config::default()
        };
        match self.sigma_bytes {
            Some(b) => Config { sigma: c.sigma_from_bytes(b), ..c },
            None => c,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    index: IndexArgs,
    /// Compare every query against an in-memory reference map.
    #[arg(long)]
    oracle: bool,
    /// Validate the index after every this many operations.
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Index directory; in memory when neither this nor NBTREE_DIR is set.
    #[arg(long, env = "NBTREE_DIR")]
    dir: Option<PathBuf>,
    /// Per-operation CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    n: u64,
    #[arg(long, default_value_t = 10_000)]
    n_queries: u64,
    /// Root buffer memory budget in bytes; larger runs are flagged.
    #[arg(long)]
    memory_budget: Option<usize>,
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TraceCmd {
    Figure2 {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "nbtree,lsm,btree,beps")]
    structures: Vec<Structure>,
    #[arg(long, default_value_t = 256.0)]
    b: f64,
    #[arg(long, default_value_t = 4.0)]
    f: f64,
    #[arg(long, default_value_t = 1024.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1024.0)]
    c1: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn summarize(r: &RunReport) {
    let a = &r.agg;
    eprintln!(
        "inserts {} avg {:.0} ns max {} ns (modeled), avg {:.0} ns max {} ns (wall)",
        a.insert_modeled.count,
        a.insert_modeled.avg(),
        a.insert_modeled.max,
        a.insert_wall.avg(),
        a.insert_wall.max
    );
    eprintln!(
        "queries {} avg {:.0} ns max {} ns (modeled), avg {:.0} ns max {} ns (wall)",
        a.query_modeled.count,
        a.query_modeled.avg(),
        a.query_modeled.max,
        a.query_wall.avg(),
        a.query_wall.max
    );
    eprintln!("pages read {} written {} seeks {}", a.pages_read, a.pages_written, a.seeks);
    if r.validations > 0 {
        eprintln!("validations passed: {}", r.validations);
    }
}

fn bench(cmd: BenchCmd) -> Result<bool> {
    let (spec, c) = match cmd {
        BenchCmd::Insert { n, common } => {
            let i = &common.index;
            (WorkloadSpec::inserts(n, i.seed, i.key_bytes, i.value_bytes), common)
        }
        BenchCmd::Query { n_queries, n, absent, common } => {
            let i = &common.index;
            let mut s = WorkloadSpec::queries(n_queries, n, i.seed, i.key_bytes, i.value_bytes);
            if absent {
                s.query_source = QuerySource::Absent;
            }
            (s, common)
        }
        BenchCmd::Mixed { n, common } => {
            let i = &common.index;
            (WorkloadSpec::mixed(n, i.seed, i.key_bytes, i.value_bytes), common)
        }
    };
    let opts = RunOptions { oracle: c.oracle, checkpoint_every: c.checkpoint_every, keep_rows: false };
    let report = run(&spec, &c.index.config(), c.dir.as_deref(), c.out.as_deref(), &opts)?;
    summarize(&report);
    if c.oracle {
        eprintln!("oracle mismatches: {}", report.mismatches);
        if let Some(m) = &report.first_mismatch {
            eprintln!("first mismatch: {m}");
        }
    }
    Ok(report.mismatches == 0)
}

fn main_inner() -> Result<bool> {
    match Cli::parse().cmd {
        Cmd::Bench(b) => bench(b),
        Cmd::Sweep(a) => {
            let spec = SweepSpec {
                param: a.param,
                values: a.values,
                base: a.index.config(),
                n_inserts: a.n,
                n_queries: a.n_queries,
                seed: a.index.seed,
                memory_budget_bytes: a.memory_budget,
            };
            let rows = sweep(&spec)?;
            write_sweep_csv(spec.param, &rows, output(&a.out)?)?;
            Ok(true)
        }
        Cmd::Validate { dir } => {
            if !dir.join("manifest").exists() {
                bail!("no index in {}", dir.display());
            }
            let t = NBTree::open_existing(&dir)?;
            let r = t.validate()?;
            println!(
                "s-tree height {} max d-tree height {} s-nodes {} disk records {} buffered {}",
                r.stree_height, r.max_dtree_height, r.snodes, r.disk_records, r.buffered_records
            );
            match r.violation {
                None => {
                    println!("ok");
                    Ok(true)
                }
                Some(v) => {
                    println!("violation: {v}");
                    Ok(false)
                }
            }
        }
        Cmd::Trace(TraceCmd::Figure2 { out }) => {
            let text = render(&trace_figure2()?);
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(true)
        }
        Cmd::Costmodel(a) => {
            let p = CostInputs { b: a.b, f: a.f, sigma: a.sigma, c1: a.c1, cost: CostParams::HDD };
            write_cost_csv(&a.n, &a.structures, &p, output(&a.out)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
