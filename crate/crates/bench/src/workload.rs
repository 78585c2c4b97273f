//! Deterministic workload generation.
//!
//! Keys are drawn uniformly from the `key_bytes` key space and rejected when
//! already generated, so every put introduces a key never seen before. Query,
//! update and delete targets are drawn from the keys that are live at that
//! point of the sequence.

use std::collections::HashSet;

use anyhow::{bail, Result};
use nbtree::{Key, Value};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkloadKind {
    Insert,
    Query,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuerySource {
    /// Uniform over keys currently present.
    Existing,
    /// Uniform over keys never inserted.
    Absent,
}

/// Relative weights of the four operation types in a mixed workload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MixRatios {
    pub put: u32,
    pub update: u32,
    pub delete: u32,
    pub query: u32,
}

impl Default for MixRatios {
    fn default() -> Self {
        MixRatios { put: 70, update: 10, delete: 10, query: 10 }
    }
}

impl MixRatios {
    fn total(&self) -> u32 {
        self.put + self.update + self.delete + self.query
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub n_ops: u64,
    pub seed: u64,
    pub key_bytes: usize,
    pub value_bytes: usize,
    pub query_source: QuerySource,
    pub mix: MixRatios,
    /// Query workloads: number of keys assumed present, namely the keys of the
    /// insert workload with the same seed and this many operations.
    pub existing: u64,
}

impl WorkloadSpec {
    pub fn inserts(n_ops: u64, seed: u64, key_bytes: usize, value_bytes: usize) -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Insert,
            n_ops,
            seed,
            key_bytes,
            value_bytes,
            query_source: QuerySource::Existing,
            mix: MixRatios::default(),
            existing: 0,
        }
    }

    /// Queries against the index built by `inserts(existing, seed, ..)`.
    pub fn queries(n_ops: u64, existing: u64, seed: u64, key_bytes: usize, value_bytes: usize) -> Self {
        WorkloadSpec { kind: WorkloadKind::Query, existing, ..Self::inserts(n_ops, seed, key_bytes, value_bytes) }
    }

    pub fn mixed(n_ops: u64, seed: u64, key_bytes: usize, value_bytes: usize) -> Self {
        WorkloadSpec { kind: WorkloadKind::Mixed, ..Self::inserts(n_ops, seed, key_bytes, value_bytes) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkOp {
    Put(Key, Value),
    Update(Key, Value),
    Delete(Key),
    Query(Key),
}

impl WorkOp {
    pub fn name(&self) -> &'static str {
        match self {
            WorkOp::Put(..) => "put",
            WorkOp::Update(..) => "update",
            WorkOp::Delete(_) => "delete",
            WorkOp::Query(_) => "query",
        }
    }

    pub fn key(&self) -> &Key {
        match self {
            WorkOp::Put(k, _) | WorkOp::Update(k, _) | WorkOp::Delete(k) | WorkOp::Query(k) => k,
        }
    }

    pub fn is_write(&self) -> bool {
        !matches!(self, WorkOp::Query(_))
    }
}

// ---------------------------------------------------------------------------
// Key generation
// ---------------------------------------------------------------------------

/// Size of the key space, saturating at u128::MAX for wide keys.
fn key_space(key_bytes: usize) -> u128 {
    if key_bytes >= 16 {
        u128::MAX
    } else {
        1u128 << (8 * key_bytes)
    }
}

struct Keys {
    rng: ChaCha8Rng,
    key_bytes: usize,
    seen: HashSet<Key>,
}

impl Keys {
    fn new(seed: u64, key_bytes: usize) -> Self {
        Keys { rng: ChaCha8Rng::seed_from_u64(seed), key_bytes, seen: HashSet::new() }
    }

    fn random(&mut self) -> Key {
        let mut b = vec![0u8; self.key_bytes];
        self.rng.fill_bytes(&mut b);
        Key::new(b)
    }

    fn fresh(&mut self) -> Result<Key> {
        if self.seen.len() as u128 >= key_space(self.key_bytes) {
            bail!("key space of {} bytes exhausted after {} keys", self.key_bytes, self.seen.len());
        }
        loop {
            let k = self.random();
            if self.seen.insert(k.clone()) {
                return Ok(k);
            }
        }
    }

    fn absent(&mut self) -> Result<Key> {
        if self.seen.len() as u128 >= key_space(self.key_bytes) {
            bail!("no absent key left in a {}-byte key space", self.key_bytes);
        }
        loop {
            let k = self.random();
            if !self.seen.contains(&k) {
                return Ok(k);
            }
        }
    }

    fn value(&mut self, value_bytes: usize) -> Value {
        let mut b = vec![0u8; value_bytes];
        self.rng.fill_bytes(&mut b);
        Value::new(b)
    }
}

/// Seed offset separating the query stream from the insert stream it targets.
const QUERY_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<WorkOp>> {
    if spec.key_bytes == 0 {
        bail!("key_bytes must be positive");
    }
    match spec.kind {
        WorkloadKind::Insert => {
            if spec.n_ops as u128 > key_space(spec.key_bytes) {
                bail!(
                    "{} unique keys requested from a {}-byte key space",
                    spec.n_ops,
                    spec.key_bytes
                );
            }
            let mut g = Keys::new(spec.seed, spec.key_bytes);
            (0..spec.n_ops)
                .map(|_| Ok(WorkOp::Put(g.fresh()?, g.value(spec.value_bytes))))
                .collect()
        }
        WorkloadKind::Query => {
            let base = WorkloadSpec::inserts(spec.existing, spec.seed, spec.key_bytes, spec.value_bytes);
            let present: Vec<Key> = generate_workload(&base)?.into_iter().map(|o| o.key().clone()).collect();
            let mut g = Keys::new(spec.seed ^ QUERY_STREAM, spec.key_bytes);
            g.seen = present.iter().cloned().collect();
            if spec.query_source == QuerySource::Existing && present.is_empty() && spec.n_ops > 0 {
                bail!("existing-key queries need a non-empty key set");
            }
            (0..spec.n_ops)
                .map(|_| {
                    Ok(WorkOp::Query(match spec.query_source {
                        QuerySource::Existing => present[g.rng.gen_range(0..present.len())].clone(),
                        QuerySource::Absent => g.absent()?,
                    }))
                })
                .collect()
        }
        WorkloadKind::Mixed => mixed(spec),
    }
}

fn mixed(spec: &WorkloadSpec) -> Result<Vec<WorkOp>> {
    let total = spec.mix.total();
    if total == 0 {
        bail!("mixed workload ratios are all zero");
    }
    let mut g = Keys::new(spec.seed, spec.key_bytes);
    let mut live: Vec<Key> = Vec::new();
    let mut ops = Vec::with_capacity(spec.n_ops as usize);
    for _ in 0..spec.n_ops {
        let mut r = g.rng.gen_range(0..total);
        let pick = if r < spec.mix.put {
            0
        } else {
            r -= spec.mix.put;
            if r < spec.mix.update {
                1
            } else if r < spec.mix.update + spec.mix.delete {
                2
            } else {
                3
            }
        };
        // Operations on existing keys fall back to a put while nothing is live.
        if pick == 0 || live.is_empty() {
            let k = g.fresh()?;
            live.push(k.clone());
            ops.push(WorkOp::Put(k, g.value(spec.value_bytes)));
            continue;
        }
        let i = g.rng.gen_range(0..live.len());
        ops.push(match pick {
            1 => WorkOp::Update(live[i].clone(), g.value(spec.value_bytes)),
            2 => WorkOp::Delete(live.swap_remove(i)),
            _ => match spec.query_source {
                QuerySource::Existing => WorkOp::Query(live[i].clone()),
                QuerySource::Absent => WorkOp::Query(g.absent()?),
            },
        });
    }
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let s = WorkloadSpec::mixed(2_000, 7, 8, 16);
        assert_eq!(generate_workload(&s).unwrap(), generate_workload(&s).unwrap());
        let t = WorkloadSpec { seed: 8, ..s.clone() };
        assert_ne!(generate_workload(&s).unwrap(), generate_workload(&t).unwrap());
    }

    #[test]
    fn query_workload_has_exact_count() {
        let s = WorkloadSpec::queries(10_000, 1_000, 3, 8, 16);
        let ops = generate_workload(&s).unwrap();
        assert_eq!(ops.len(), 10_000);
        assert!(ops.iter().all(|o| matches!(o, WorkOp::Query(_))));
        let inserted: HashSet<Key> = generate_workload(&WorkloadSpec::inserts(1_000, 3, 8, 16))
            .unwrap()
            .into_iter()
            .map(|o| o.key().clone())
            .collect();
        assert!(ops.iter().all(|o| inserted.contains(o.key())));

        let absent = WorkloadSpec { query_source: QuerySource::Absent, ..s };
        assert!(generate_workload(&absent).unwrap().iter().all(|o| !inserted.contains(o.key())));
    }

    #[test]
    fn inserted_keys_are_distinct() {
        let ops = generate_workload(&WorkloadSpec::inserts(20_000, 1, 2, 4)).unwrap();
        let set: HashSet<&Key> = ops.iter().map(|o| o.key()).collect();
        assert_eq!(set.len(), ops.len());
        assert!(ops.iter().all(|o| o.key().len() == 2));

        let ops = generate_workload(&WorkloadSpec::mixed(20_000, 1, 8, 4)).unwrap();
        let puts: Vec<&Key> = ops.iter().filter(|o| matches!(o, WorkOp::Put(..))).map(|o| o.key()).collect();
        let set: HashSet<&Key> = puts.iter().copied().collect();
        assert_eq!(set.len(), puts.len());
    }

    #[test]
    fn key_space_exhaustion_is_an_error() {
        assert!(generate_workload(&WorkloadSpec::inserts(256, 1, 1, 4)).is_ok());
        assert!(generate_workload(&WorkloadSpec::inserts(257, 1, 1, 4)).is_err());
        let mut m = WorkloadSpec::mixed(1_000, 1, 1, 4);
        m.mix = MixRatios { put: 1, update: 0, delete: 0, query: 0 };
        assert!(generate_workload(&m).is_err());
    }

    #[test]
    fn mixed_ratios_are_respected() {
        let ops = generate_workload(&WorkloadSpec::mixed(100_000, 5, 8, 4)).unwrap();
        let count = |n: &str| ops.iter().filter(|o| o.name() == n).count() as f64 / 1e5;
        assert!((count("put") - 0.70).abs() < 0.01);
        assert!((count("update") - 0.10).abs() < 0.01);
        assert!((count("delete") - 0.10).abs() < 0.01);
        assert!((count("query") - 0.10).abs() < 0.01);
    }
}
