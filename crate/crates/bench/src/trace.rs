//! Structural trace of the small worked example: σ = 6, f = 3, B = 4 and four
//! records per leaf, Basic mode. The index is dumped after each batch.

use std::fmt::Write as _;

use anyhow::{ensure, Result};
use nbtree::engine::NodeDump;
use nbtree::{Config, Key, Mode, NBTree, Value};

/// Insertion batches; a dump is taken after each.
pub const BATCHES: [(&str, &[u64]); 4] = [
    ("a", &[1, 2, 8, 15, 21, 32]),
    ("b", &[33]),
    ("c-e", &[3, 4, 5, 16, 18, 20, 40]),
    ("f.3", &[6, 7, 10, 11, 12, 13]),
];

pub fn trace_config() -> Config {
    Config {
        page_bytes: 1024,
        dtree_fanout: 4,
        stree_fanout: 3,
        sigma: 6,
        key_bytes: 8,
        value_bytes: 8,
        leaf_capacity: Some(4),
        mode: Mode::Basic,
        deamortize: false,
        ..Config::default()
    }
}

#[derive(Clone, Debug)]
pub struct Panel {
    pub label: &'static str,
    pub dump: NodeDump,
}

fn s_keys(d: &NodeDump) -> Vec<u64> {
    d.s_keys.iter().map(|k| k.to_u64()).collect()
}

/// Runs the batches and checks the structures that are fully determined:
/// the buffer after the first batch, the first split, and the new root after
/// the last batch.
pub fn trace_figure2() -> Result<Vec<Panel>> {
    let mut t = NBTree::in_memory(trace_config())?;
    let mut panels = Vec::new();
    for (label, keys) in BATCHES {
        for &k in keys {
            t.insert(Key::from_u64(k, 8), Value::from_u64(k, 8))?;
        }
        let report = t.validate()?;
        ensure!(report.is_ok(), "panel {label}: {:?}", report.violation);
        panels.push(Panel { label, dump: t.dump()? });
    }

    let a = &panels[0].dump;
    ensure!(a.children.is_empty(), "panel a: expected a single s-node");
    ensure!(a.keys() == [1, 2, 8, 15, 21, 32], "panel a: buffer {:?}", a.keys());

    let b = &panels[1].dump;
    ensure!(s_keys(b) == [15], "panel b: root s-keys {:?}", s_keys(b));
    ensure!(b.children.len() == 2, "panel b: {} children", b.children.len());
    ensure!(b.children[0].keys() == [1, 2, 8], "panel b: left leaf {:?}", b.children[0].keys());
    ensure!(
        b.children[1].keys() == [15, 21, 32, 33],
        "panel b: right leaf {:?}",
        b.children[1].keys()
    );

    let f = &panels[3].dump;
    ensure!(s_keys(f) == [15], "panel f.3: root s-keys {:?}", s_keys(f));
    ensure!(
        f.children.len() == 2 && f.children.iter().all(|c| !c.children.is_empty()),
        "panel f.3: expected two non-leaf children under the root"
    );
    Ok(panels)
}

pub fn render(panels: &[Panel]) -> String {
    let mut s = String::new();
    for p in panels {
        let _ = writeln!(s, "panel {}", p.label);
        let _ = write!(s, "{}", p.dump);
        s.push('\n');
    }
    s
}
