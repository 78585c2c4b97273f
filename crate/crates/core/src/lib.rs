//! Nested B-tree (NB-tree): a write-optimized key-value index.
//!
//! The index is a B-tree of structural nodes ("s-nodes"). Each s-node owns an
//! immutable on-disk B+-tree ("d-tree") of records; the root's d-tree is an
//! in-memory buffer. Inserts land in the buffer and are pushed down in
//! sequential batches when it overflows, so every write is a bulk rewrite of
//! a few contiguous extents. All page traffic is counted by a seek/transfer
//! cost model so runs can be compared in modeled device time.
//!
//! ```
//! use nbtree::{Config, Key, NBTree, Value};
//!
//! let config = Config { sigma: 64, value_bytes: 16, ..Config::default() };
//! let mut t = NBTree::in_memory(config).unwrap();
//! for i in 0..1000u64 {
//!     t.insert(Key::from_u64(i, 8), Value::from_u64(i, 16)).unwrap();
//! }
//! assert_eq!(t.get(&Key::from_u64(7, 8)).unwrap(), Some(Value::from_u64(7, 16)));
//! assert!(t.validate().unwrap().is_ok());
//! ```

pub mod bloom;
pub mod costmodel;
pub mod dtree;
pub mod engine;
pub mod error;
pub mod pager;
pub mod types;

pub use bloom::BloomFilter;
pub use engine::{NBTree, Snapshot, ValidationReport};
pub use error::{Error, Result};
pub use pager::{Cursor, Extent, IoCounts, IoStats, ModeledTime, PageId, Pager};
pub use types::{
    oracle_apply, Config, CostParams, DeltaRecord, Key, KeyRange, Mode, Op, OracleMap,
    RecordCodec, Value,
};
