use nbtree::Config;
use nbtree_bench::runner::{run, RunOptions};
use nbtree_bench::workload::WorkloadSpec;

#[test]
fn inserts_then_queries_match_oracle() {
    let cfg = Config { sigma: 1024, stree_fanout: 4, ..Config::default() };
    let opts = RunOptions { oracle: true, checkpoint_every: Some(25_000), keep_rows: false };
    let spec = WorkloadSpec::queries(10_000, 100_000, 11, cfg.key_bytes, cfg.value_bytes);
    let r = run(&spec, &cfg, None, None, &opts).unwrap();
    assert_eq!(r.mismatches, 0, "{:?}", r.first_mismatch);
    assert_eq!(r.agg.query_modeled.count, 10_000);
}

#[test]
fn deamortization_shrinks_the_max_to_mean_ratio() {
    let spec = WorkloadSpec::inserts(1 << 16, 2, 8, 128);
    let ratio = |deamortize: bool| {
        let cfg = Config { sigma: 1024, stree_fanout: 4, deamortize, ..Config::default() };
        let a = run(&spec, &cfg, None, None, &RunOptions::default()).unwrap().agg.insert_modeled;
        a.max as f64 / a.avg()
    };
    let (off, on) = (ratio(false), ratio(true));
    assert!(on * 10.0 <= off, "on {on:.1} off {off:.1}");
}
