//! Acceptance suite. Runs every criterion at its stated size and tolerance and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! Extra arguments that do not start with `-` select criteria by id (`AC4`).

use std::collections::HashSet;
use std::fs;
use std::os::unix::fs::MetadataExt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use nbtree::costmodel::{lsm_costs, lsm_simulate, nbtree_costs};
use nbtree::{BloomFilter, Config, DeltaRecord, Key, KeyRange, Mode, NBTree, OracleMap, ValidationReport};
use nbtree_bench::runner::{Aggregates, RunOptions, Runner};
use nbtree_bench::sweep::{sweep, SweepParam, SweepSpec};
use nbtree_bench::trace::trace_figure2;
use nbtree_bench::workload::{generate_workload, WorkOp, WorkloadSpec};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { id, pass, detail: detail.into() }
}

fn print(o: &Outcome) {
    println!("{} {}: {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn key(x: u64) -> Key {
    Key::from_u64(x, 8)
}

fn checked(r: ValidationReport) -> Result<ValidationReport> {
    ensure!(r.is_ok(), "validate: {}", r.violation.unwrap_or_default());
    Ok(r)
}

// ---------------------------------------------------------------------------
// AC1: structural trace of the worked example
// ---------------------------------------------------------------------------

fn ac1() -> Result<Outcome> {
    let start = Instant::now();
    let res = trace_figure2();
    let took = start.elapsed();
    Ok(match res {
        Ok(p) => outcome(
            "AC1",
            took < Duration::from_secs(1),
            format!(
                "panel a buffer {:?}; panel b root s-keys [15], leaves {:?} / {:?}; {:.1} ms",
                p[0].dump.keys(),
                p[1].dump.children[0].keys(),
                p[1].dump.children[1].keys(),
                took.as_secs_f64() * 1e3
            ),
        ),
        Err(e) => outcome("AC1", false, format!("{e:#}")),
    })
}

// ---------------------------------------------------------------------------
// AC2 + AC6: oracle fuzz with per-query page bound
// ---------------------------------------------------------------------------

#[derive(Default)]
struct FuzzTally {
    point_queries: u64,
    point_mismatches: u64,
    range_queries: u64,
    range_mismatches: u64,
    validations: u64,
    bound_violations: u64,
    /// Largest pages_read / bound seen.
    worst_ratio: f64,
    worst_pages: u64,
    worst_bound: u64,
    first_problem: Option<String>,
}

fn fuzz_one(seed: u64, deamortize: bool, t: &mut FuzzTally) -> Result<()> {
    let cfg = Config {
        page_bytes: 4096,
        sigma: 512,
        stree_fanout: 3,
        mode: Mode::Advanced,
        deamortize,
        ..Config::default()
    };
    let ops = generate_workload(&WorkloadSpec::mixed(100_000, seed, cfg.key_bytes, cfg.value_bytes))?;
    let mut tree = NBTree::in_memory(cfg)?;
    let mut oracle = OracleMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5_5a5a);
    for (i, op) in ops.iter().enumerate() {
        let seq = i as u64 + 1;
        match op {
            WorkOp::Put(k, v) => {
                tree.insert(k.clone(), v.clone())?;
                oracle.apply(&DeltaRecord::put(k.clone(), v.clone(), seq));
            }
            WorkOp::Update(k, v) => {
                tree.update(k.clone(), v.clone())?;
                oracle.apply(&DeltaRecord::update(k.clone(), v.clone(), seq));
            }
            WorkOp::Delete(k) => {
                tree.delete(k.clone())?;
                oracle.apply(&DeltaRecord::delete(k.clone(), seq));
            }
            WorkOp::Query(k) => {
                let (got, trace) = tree.get_traced(k)?;
                t.point_queries += 1;
                if got.as_ref() != oracle.get(k) {
                    t.point_mismatches += 1;
                    t.first_problem.get_or_insert(format!("seed {seed} op {i}: point query mismatch"));
                }
                let s = tree.shape();
                let bound = s.stree_height as u64 * (s.max_dtree_height as u64 + 1);
                let ratio = trace.pages_read as f64 / bound.max(1) as f64;
                if ratio > t.worst_ratio {
                    t.worst_ratio = ratio;
                    t.worst_pages = trace.pages_read;
                    t.worst_bound = bound;
                }
                if trace.pages_read > bound {
                    t.bound_violations += 1;
                }
            }
        }
        let done = i as u64 + 1;
        if done % 1000 == 500 {
            let lo = rng.next_u64();
            let hi = lo.saturating_add(rng.gen_range(0..u64::MAX / 100));
            let r = KeyRange::new(key(lo), key(hi))?;
            t.range_queries += 1;
            if tree.range(&r)? != oracle.range(&r) {
                t.range_mismatches += 1;
                t.first_problem.get_or_insert(format!("seed {seed} op {i}: range mismatch"));
            }
        }
        if done.is_multiple_of(1000) {
            let v = checked(tree.validate()?).with_context(|| format!("seed {seed} after {done} ops"))?;
            let s = tree.shape();
            ensure!(
                (v.stree_height, v.max_dtree_height) == (s.stree_height, s.max_dtree_height),
                "validate and shape disagree on heights"
            );
            t.validations += 1;
        }
    }
    Ok(())
}

fn ac2_ac6() -> Vec<Outcome> {
    let mut t = FuzzTally::default();
    let mut slowest = Duration::ZERO;
    let mut error = None;
    for seed in 0..10 {
        let start = Instant::now();
        for deamortize in [false, true] {
            if let Err(e) = fuzz_one(seed, deamortize, &mut t) {
                error.get_or_insert(format!("seed {seed} deamortize {deamortize}: {e:#}"));
            }
        }
        slowest = slowest.max(start.elapsed());
    }
    let ac2_ok = error.is_none()
        && t.point_mismatches == 0
        && t.range_mismatches == 0
        && t.range_queries == 2_000
        && t.validations == 2_000
        && slowest < Duration::from_secs(120);
    let mut detail = format!(
        "{} point queries ({} mismatches), {} range queries ({} mismatches), {} validations; slowest seed {:.1} s",
        t.point_queries,
        t.point_mismatches,
        t.range_queries,
        t.range_mismatches,
        t.validations,
        slowest.as_secs_f64()
    );
    if let Some(e) = error.as_ref().or(t.first_problem.as_ref()) {
        detail.push_str(&format!("; {e}"));
    }
    let ac6 = outcome(
        "AC6",
        error.is_none() && t.point_queries > 0 && t.bound_violations == 0,
        format!(
            "{} of {} queries over H_s*(H_d+1); tightest {} pages vs bound {}",
            t.bound_violations, t.point_queries, t.worst_pages, t.worst_bound
        ),
    );
    vec![outcome("AC2", ac2_ok, detail), ac6]
}

// ---------------------------------------------------------------------------
// AC3: bloom false-positive rate
// ---------------------------------------------------------------------------

fn ac3() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut set = HashSet::new();
    while set.len() < 100_000 {
        set.insert(rng.next_u64());
    }
    let keys: Vec<Key> = set.iter().map(|&x| key(x)).collect();
    let f = BloomFilter::build(&keys, 8, 3);
    ensure!(keys.iter().all(|k| f.may_contain(k)), "false negative");
    let mut probes = 0u64;
    let mut fp = 0u64;
    while probes < 100_000 {
        let x = rng.next_u64();
        if set.contains(&x) {
            continue;
        }
        probes += 1;
        fp += f.may_contain(&key(x)) as u64;
    }
    let rate = fp as f64 / probes as f64;
    Ok(outcome("AC3", (0.005..=0.05).contains(&rate), format!("fp rate {:.3}% over {probes} probes", rate * 100.0)))
}

// ---------------------------------------------------------------------------
// AC4, AC5, AC7, AC8: growth runs at σ = 2^10, f = 4
// ---------------------------------------------------------------------------

fn growth_config(deamortize: bool) -> Config {
    Config { sigma: 1 << 10, stree_fanout: 4, deamortize, ..Config::default() }
}

struct Growth {
    tree: NBTree,
    agg: Aggregates,
}

fn grow(n: u64, deamortize: bool) -> Result<Growth> {
    let c = growth_config(deamortize);
    let ops = generate_workload(&WorkloadSpec::inserts(n, 42, c.key_bytes, c.value_bytes))?;
    let mut r = Runner::new(NBTree::in_memory(c)?, RunOptions::default());
    let agg = r.execute(&ops, None)?.agg;
    Ok(Growth { tree: r.tree, agg })
}

fn ac4(runs: &[(u64, &Growth)]) -> Result<Outcome> {
    let c = growth_config(false);
    let pred = |n: u64| -> Result<f64> {
        Ok(nbtree_costs(n as f64, c.dtree_fanout as f64, c.stree_fanout as f64, c.sigma as f64)?
            .amortized_insert
            .alpha_seq)
    };
    let measured = |g: &Growth| g.agg.pages_written as f64 / g.agg.insert_modeled.count as f64;
    let (n0, g0) = runs[0];
    let fit = measured(g0) / pred(n0)?;
    let mut ok = true;
    let mut parts = vec![format!("c = {fit:.3} at n = 2^{}", n0.trailing_zeros())];
    for &(n, g) in &runs[1..] {
        let want = fit * pred(n)?;
        let got = measured(g);
        let rel = got / want;
        ok &= (0.5..=1.5).contains(&rel);
        parts.push(format!("n = 2^{}: {got:.4} pages/insert vs {want:.4} predicted ({rel:.2}x)", n.trailing_zeros()));
    }
    Ok(outcome("AC4", ok, parts.join("; ")))
}

fn ac5(off: &Aggregates, on: &Aggregates) -> Outcome {
    let (max_off, mean_off) = (off.insert_modeled.max as f64, off.insert_modeled.avg());
    let (max_on, mean_on) = (on.insert_modeled.max as f64, on.insert_modeled.avg());
    let a = max_on <= max_off / 10.0;
    let b = max_on <= 20.0 * mean_on;
    let c = max_off / mean_off >= 100.0;
    outcome(
        "AC5",
        a && b && c,
        format!(
            "max on/off = {:.4} (<= 0.1: {a}); on max/mean = {:.1} (<= 20: {b}); off max/mean = {:.1} (>= 100: {c}); max on {:.2} ms, mean on {:.3} ms",
            max_on / max_off,
            max_on / mean_on,
            max_off / mean_off,
            max_on / 1e6,
            mean_on / 1e6
        ),
    )
}

fn ac7(g: &mut Growth, n: u64) -> Result<Outcome> {
    let h_s = checked(g.tree.validate()?)?.stree_height;
    let c = growth_config(false);
    let qs = generate_workload(&WorkloadSpec::queries(10_000, n, 42, c.key_bytes, c.value_bytes))?;
    let mut searched = 0u64;
    for q in &qs {
        let (v, trace) = g.tree.get_traced(q.key())?;
        ensure!(v.is_some(), "existing key not found");
        searched += trace.dtrees_searched as u64;
    }
    let mean = searched as f64 / qs.len() as f64;
    let limit = 1.0 + 0.05 * h_s as f64;
    Ok(outcome("AC7", mean <= limit, format!("mean d-trees searched {mean:.4} vs limit {limit:.2} (H_s = {h_s})")))
}

fn ac8(g: &Growth, n: u64) -> Result<Outcome> {
    let mut ok = true;
    let mut worst = (1.0f64, String::new());
    let b = 16u64;
    for f in [2u64, 4] {
        for c1 in [4u64, 64] {
            for n in [1u64 << 10, 1 << 14] {
                let sim = lsm_simulate(n, f, c1, b);
                let model = lsm_costs(n as f64, b as f64, f as f64, c1 as f64)?.amortized_insert.alpha_seq * n as f64;
                let r = sim.total_pages as f64 / model;
                ok &= (0.25..=4.0).contains(&r);
                if (r.ln()).abs() >= worst.0.ln().abs() {
                    worst = (r, format!("f={f} C1={c1} n={n}"));
                }
            }
        }
    }
    let v = checked(g.tree.validate()?)?;
    let c = growth_config(false);
    let alpha = nbtree_costs(n as f64, c.dtree_fanout as f64, c.stree_fanout as f64, c.sigma as f64)?.worst_query_alpha;
    let structural = (v.stree_height * v.max_dtree_height) as f64;
    let r = alpha / structural;
    let ok_q = (0.5..=2.0).contains(&r);
    Ok(outcome(
        "AC8",
        ok && ok_q,
        format!(
            "LSM simulated/model pages worst {:.2}x at {} (B = {b}); query alpha {alpha:.2} vs H_s*H_d = {} * {} = {structural} ({r:.2}x)",
            worst.0, worst.1, v.stree_height, v.max_dtree_height
        ),
    ))
}

fn growth_suite() -> Result<Vec<Outcome>> {
    let sizes = [1u64 << 14, 1 << 16, 1 << 18];
    let g14 = grow(sizes[0], false)?;
    let g16 = grow(sizes[1], false)?;
    let mut g18 = grow(sizes[2], false)?;
    let on = grow(sizes[2], true)?;
    ensure!(on.tree.counters().forced_drains == 0, "deamortized run forced a drain");
    let mut out = vec![ac4(&[(sizes[0], &g14), (sizes[1], &g16), (sizes[2], &g18)])?];
    out.push(ac5(&g18.agg, &on.agg));
    out.push(ac7(&mut g18, sizes[2])?);
    out.push(ac8(&g18, sizes[2])?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// AC9: persistence
// ---------------------------------------------------------------------------

fn ac9() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("idx");
    let cfg = Config { sigma: 256, ..Config::default() };
    let ops = generate_workload(&WorkloadSpec::mixed(10_000, 9, cfg.key_bytes, cfg.value_bytes))?;
    let mut r = Runner::new(NBTree::open(&path, cfg.clone())?, RunOptions { oracle: true, ..RunOptions::default() });
    let rep = r.execute(&ops, None)?;
    ensure!(rep.mismatches == 0, "mismatch before close");
    let oracle = r.oracle().expect("oracle on").clone();

    // A stale temp file must not survive, and the manifest must be replaced
    // by rename (new inode) rather than rewritten in place.
    let manifest = path.join("manifest");
    let tmp = path.join("manifest.tmp");
    fs::write(&tmp, b"stale")?;
    let ino_before = fs::metadata(&manifest)?.ino();
    r.tree.close()?;
    let ino_after = fs::metadata(&manifest)?.ino();
    let renamed = ino_before != ino_after && !tmp.exists();

    let mut t = NBTree::open(&path, cfg)?;
    let v = checked(t.validate()?)?;
    let mut wrong = 0;
    let mut touched: Vec<&Key> = ops.iter().map(|o| o.key()).collect();
    touched.dedup();
    for k in &touched {
        if t.get(k)?.as_ref() != oracle.get(k) {
            wrong += 1;
        }
    }
    let full = KeyRange::new(key(0), key(u64::MAX))?;
    let range_ok = t.range(&full)? == oracle.range(&full);
    Ok(outcome(
        "AC9",
        wrong == 0 && range_ok && renamed,
        format!(
            "{} keys re-read, {wrong} wrong, full range {}; validate ok (H_s = {}); manifest replaced by rename: {renamed}",
            touched.len(),
            if range_ok { "equal" } else { "differs" },
            v.stree_height
        ),
    ))
}

// ---------------------------------------------------------------------------
// AC10: sweep directions
// ---------------------------------------------------------------------------

fn ac10() -> Result<Outcome> {
    let n = 1u64 << 18;
    let base = Config { stree_fanout: 4, ..Config::default() };
    let spec = |param, values: Vec<usize>, sigma| SweepSpec {
        param,
        values,
        base: Config { sigma, ..base.clone() },
        n_inserts: n,
        n_queries: 1_000,
        seed: 10,
        memory_budget_bytes: Some(1 << 20),
    };
    let fs = vec![3, 6, 9, 12, 15];
    let mut ok = true;
    let mut parts = Vec::new();
    for sigma in [256usize, 4096] {
        let rows = sweep(&spec(SweepParam::F, fs.clone(), sigma))?;
        let avg: Vec<f64> = rows.iter().map(|r| r.agg.insert_modeled.avg()).collect();
        let mono = avg.windows(2).all(|w| w[1] >= w[0]);
        ok &= mono;
        parts.push(format!(
            "sigma {sigma}: f {fs:?} -> avg insert us {:?} nondecreasing {mono}",
            avg.iter().map(|x| (x / 1e3 * 10.0).round() / 10.0).collect::<Vec<_>>()
        ));
    }
    let sigmas = vec![256, 512, 1024, 2048, 4096, 8192];
    let rows = sweep(&spec(SweepParam::Sigma, sigmas, 256))?;
    let inside: Vec<_> = rows.iter().filter(|r| r.within_budget).collect();
    ensure!(inside.len() >= 2, "fewer than two sigma values fit the budget");
    let avg: Vec<f64> = inside.iter().map(|r| r.agg.insert_modeled.avg()).collect();
    let mono = avg.windows(2).all(|w| w[1] <= w[0]);
    ok &= mono;
    parts.push(format!(
        "f 4: sigma {:?} (within 1 MiB) -> avg insert us {:?} nonincreasing {mono}",
        inside.iter().map(|r| r.value).collect::<Vec<_>>(),
        avg.iter().map(|x| (x / 1e3 * 10.0).round() / 10.0).collect::<Vec<_>>()
    ));
    Ok(outcome("AC10", ok, parts.join("; ")))
}

// ---------------------------------------------------------------------------

fn guarded(ids: &[&'static str], f: impl FnOnce() -> Result<Vec<Outcome>>) -> Vec<Outcome> {
    let fail = |msg: String| ids.iter().map(|id| outcome(id, false, msg.clone())).collect();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => fail(format!("error: {e:#}")),
        Err(p) => fail(format!(
            "panic: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |ids: &[&str]| filters.is_empty() || ids.iter().any(|id| filters.iter().any(|f| f == id));
    type Group = (&'static [&'static str], fn() -> Result<Vec<Outcome>>);
    let groups: [Group; 6] = [
        (&["AC1"], || Ok(vec![ac1()?])),
        (&["AC2", "AC6"], || Ok(ac2_ac6())),
        (&["AC3"], || Ok(vec![ac3()?])),
        (&["AC4", "AC5", "AC7", "AC8"], growth_suite),
        (&["AC9"], || Ok(vec![ac9()?])),
        (&["AC10"], || Ok(vec![ac10()?])),
    ];
    let mut all = Vec::new();
    for (ids, f) in groups {
        if !wanted(ids) {
            continue;
        }
        let start = Instant::now();
        let res = guarded(ids, f);
        for o in &res {
            print(o);
        }
        eprintln!("  ({} took {:.1} s)", ids.join("/"), start.elapsed().as_secs_f64());
        all.extend(res);
    }
    all.sort_by_key(|o| o.id[2..].parse::<u32>().unwrap_or(0));
    let failed: Vec<&str> = all.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("\nacceptance summary");
    for o in &all {
        println!("{} {}", o.id, if o.pass { "PASS" } else { "FAIL" });
    }
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
