use std::fs;
use std::process::Command;

fn nbtree() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nbtree"))
}

#[test]
fn insert_into_env_dir_then_validate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("idx");
    let out = tmp.path().join("ins.csv");
    let st = nbtree()
        .args(["bench", "insert", "--n", "3000", "--sigma", "64", "--fanout", "3", "--page-bytes", "4096"])
        .args(["--seed", "5", "--oracle", "--checkpoint-every", "1000", "--out"])
        .arg(&out)
        .env("NBTREE_DIR", &dir)
        .status()
        .unwrap();
    assert!(st.success());
    assert!(dir.join("manifest").exists());
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("op_index,op,wall_ns,pages_read,pages_written,seeks,modeled_ns"));
    assert_eq!(lines.count(), 3000);

    let v = nbtree().args(["validate", "--dir"]).arg(&dir).output().unwrap();
    assert!(v.status.success());
    assert!(String::from_utf8_lossy(&v.stdout).contains("ok"));
}

#[test]
fn validate_without_index_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let st = nbtree().args(["validate", "--dir"]).arg(tmp.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn single_value_sweep_is_rejected() {
    let st = nbtree().args(["sweep", "--param", "f", "--values", "3", "--n", "100"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn trace_and_cost_table() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("trace.txt");
    assert!(nbtree().args(["trace", "figure2", "--out"]).arg(&p).status().unwrap().success());
    assert!(fs::read_to_string(&p).unwrap().contains("panel f.3"));

    let o = nbtree().args(["costmodel", "--n", "1048576", "--structures", "nbtree,btree"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("1048576,btree,2.5,2.5"));
}
