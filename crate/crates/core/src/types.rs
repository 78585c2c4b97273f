//! Keys, values, delta records, configuration, and the reference oracle.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Fixed-length key. Ordering is lexicographic over the bytes.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key(Vec<u8>);

impl Key {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Key(bytes.into())
    }

    /// Big-endian encoding of `v` in `len` bytes, so integer order equals key order.
    /// Lengths above 8 are left-padded with zeros; lengths below 8 keep the low bytes.
    pub fn from_u64(v: u64, len: usize) -> Self {
        let be = v.to_be_bytes();
        let mut out = vec![0u8; len];
        if len >= 8 {
            out[len - 8..].copy_from_slice(&be);
        } else {
            out.copy_from_slice(&be[8 - len..]);
        }
        Key(out)
    }

    /// Inverse of [`Key::from_u64`] for keys of up to 8 significant bytes.
    pub fn to_u64(&self) -> u64 {
        let tail = &self.0[self.0.len().saturating_sub(8)..];
        tail.iter().fold(0u64, |acc, b| (acc << 8) | *b as u64)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 8 && !self.0.is_empty() {
            write!(f, "Key({})", self.to_u64())
        } else {
            write!(f, "Key(0x")?;
            for b in &self.0 {
                write!(f, "{b:02x}")?;
            }
            write!(f, ")")
        }
    }
}

/// Fixed-length value payload.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Value(Vec<u8>);

impl Value {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Value(bytes.into())
    }

    /// A value of `len` bytes whose first 8 bytes carry `v` big-endian.
    pub fn from_u64(v: u64, len: usize) -> Self {
        let mut out = vec![0u8; len];
        let be = v.to_be_bytes();
        let n = len.min(8);
        out[..n].copy_from_slice(&be[8 - n..]);
        Value(out)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Value({} bytes)", self.0.len())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    Put(Value),
    Delete,
    Update(Value),
}

impl Op {
    pub fn tag(&self) -> u8 {
        match self {
            Op::Put(_) => 0,
            Op::Delete => 1,
            Op::Update(_) => 2,
        }
    }

    pub fn value(&self) -> Option<&Value> {
        match self {
            Op::Put(v) | Op::Update(v) => Some(v),
            Op::Delete => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Put(_) => "put",
            Op::Delete => "delete",
            Op::Update(_) => "update",
        }
    }
}

/// The unit that moves through flushes: a key plus a put/delete/update marker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeltaRecord {
    pub key: Key,
    pub op: Op,
    pub seq: u64,
}

impl DeltaRecord {
    pub fn put(key: Key, value: Value, seq: u64) -> Self {
        DeltaRecord { key, op: Op::Put(value), seq }
    }

    pub fn delete(key: Key, seq: u64) -> Self {
        DeltaRecord { key, op: Op::Delete, seq }
    }

    pub fn update(key: Key, value: Value, seq: u64) -> Self {
        DeltaRecord { key, op: Op::Update(value), seq }
    }

    pub fn is_tombstone(&self) -> bool {
        matches!(self.op, Op::Delete)
    }
}

/// Inclusive key range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyRange {
    pub low: Key,
    pub high: Key,
}

impl KeyRange {
    pub fn new(low: Key, high: Key) -> Result<Self> {
        if low > high {
            return Err(Error::InvalidArgument(format!(
                "range low {low:?} above high {high:?}"
            )));
        }
        Ok(KeyRange { low, high })
    }

    pub fn contains(&self, key: &Key) -> bool {
        &self.low <= key && key <= &self.high
    }
}

// ---------------------------------------------------------------------------
// Record codec
// ---------------------------------------------------------------------------

/// Fixed-width record encoding: tag ∥ seq (u64 BE) ∥ key ∥ value.
/// Deletes carry a zero-filled value so every record has the same width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordCodec {
    pub key_bytes: usize,
    pub value_bytes: usize,
}

impl RecordCodec {
    pub fn new(key_bytes: usize, value_bytes: usize) -> Self {
        RecordCodec { key_bytes, value_bytes }
    }

    pub fn encoded_len(&self) -> usize {
        1 + 8 + self.key_bytes + self.value_bytes
    }

    pub fn encode(&self, rec: &DeltaRecord) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(rec, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, rec: &DeltaRecord, out: &mut Vec<u8>) -> Result<()> {
        if rec.key.len() != self.key_bytes {
            return Err(Error::KeyLength { expected: self.key_bytes, got: rec.key.len() });
        }
        out.push(rec.op.tag());
        out.extend_from_slice(&rec.seq.to_be_bytes());
        out.extend_from_slice(rec.key.as_bytes());
        match rec.op.value() {
            Some(v) => {
                if v.len() != self.value_bytes {
                    return Err(Error::ValueLength { expected: self.value_bytes, got: v.len() });
                }
                out.extend_from_slice(v.as_bytes());
            }
            None => out.resize(out.len() + self.value_bytes, 0),
        }
        Ok(())
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<DeltaRecord> {
        if bytes.len() != self.encoded_len() {
            return Err(Error::Codec(format!(
                "record length {} != {}",
                bytes.len(),
                self.encoded_len()
            )));
        }
        let seq = u64::from_be_bytes(bytes[1..9].try_into().expect("8 bytes"));
        let key = Key::new(&bytes[9..9 + self.key_bytes]);
        let val = &bytes[9 + self.key_bytes..];
        let op = match bytes[0] {
            0 => Op::Put(Value::new(val)),
            1 => Op::Delete,
            2 => Op::Update(Value::new(val)),
            t => return Err(Error::Codec(format!("unknown op tag {t}"))),
        };
        Ok(DeltaRecord { key, op, seq })
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Basic,
    Advanced,
}

/// Device timing used to turn I/O counters into modeled seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostParams {
    pub t_seek: f64,
    pub t_seq_r: f64,
    pub t_seq_w: f64,
}

impl CostParams {
    /// A spinning disk: 8.5 ms seeks, 4 KiB pages streamed at about 3e-5 s each.
    pub const HDD: CostParams = CostParams { t_seek: 8.5e-3, t_seq_r: 3e-5, t_seq_w: 3e-5 };

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if ok(self.t_seek) && ok(self.t_seq_r) && ok(self.t_seq_w) {
            Ok(())
        } else {
            Err(Error::Config(format!("cost parameters must be positive: {self:?}")))
        }
    }
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams::HDD
    }
}

/// Size of a child reference inside an internal d-node.
pub const CHILD_REF_BYTES: usize = 8;
/// Node-type tag plus 16-bit entry count.
pub const NODE_HEADER_BYTES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub page_bytes: usize,
    /// Maximum children per internal d-node (B).
    pub dtree_fanout: usize,
    /// Maximum children per non-leaf s-node (f).
    pub stree_fanout: usize,
    /// Maximum records per d-tree (σ).
    pub sigma: usize,
    pub key_bytes: usize,
    pub value_bytes: usize,
    /// Caps records per leaf d-node below what fits in a page.
    pub leaf_capacity: Option<usize>,
    pub bloom_bits_per_key: usize,
    pub bloom_hashes: u32,
    pub mode: Mode,
    pub deamortize: bool,
    /// Independent read heads in the seek model (writes always have one).
    pub read_heads: usize,
    pub cost: CostParams,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            page_bytes: 4096,
            dtree_fanout: 256,
            stree_fanout: 3,
            sigma: 1024,
            key_bytes: 8,
            value_bytes: 128,
            leaf_capacity: None,
            bloom_bits_per_key: 8,
            bloom_hashes: 3,
            mode: Mode::Advanced,
            deamortize: false,
            read_heads: 2,
            cost: CostParams::HDD,
        }
    }
}

impl Config {
    pub fn codec(&self) -> RecordCodec {
        RecordCodec::new(self.key_bytes, self.value_bytes)
    }

    pub fn record_bytes(&self) -> usize {
        self.codec().encoded_len()
    }

    /// Number of records that fit into `bytes` of buffer, as used when σ is given in bytes.
    pub fn sigma_from_bytes(&self, bytes: usize) -> usize {
        bytes / self.record_bytes()
    }

    /// Records per leaf d-node.
    pub fn leaf_records(&self) -> usize {
        let fit = (self.page_bytes.saturating_sub(NODE_HEADER_BYTES)) / self.record_bytes();
        match self.leaf_capacity {
            Some(c) => c.min(fit),
            None => fit,
        }
    }

    /// Bytes needed by an internal d-node with B children.
    pub fn internal_node_bytes(&self) -> usize {
        NODE_HEADER_BYTES
            + (self.dtree_fanout - 1) * (self.key_bytes + CHILD_REF_BYTES)
            + CHILD_REF_BYTES
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.stree_fanout < 2 {
            return err(format!("s-tree fanout {} < 2", self.stree_fanout));
        }
        if self.dtree_fanout < 4 {
            return err(format!("d-tree fanout {} < 4", self.dtree_fanout));
        }
        if self.dtree_fanout > u16::MAX as usize {
            return err(format!("d-tree fanout {} too large", self.dtree_fanout));
        }
        if self.sigma < 2 * self.stree_fanout {
            return err(format!("sigma {} < 2f = {}", self.sigma, 2 * self.stree_fanout));
        }
        if self.key_bytes == 0 {
            return err("key_bytes must be positive".into());
        }
        if self.internal_node_bytes() > self.page_bytes {
            return err(format!(
                "page of {} bytes cannot hold an internal d-node of {} bytes",
                self.page_bytes,
                self.internal_node_bytes()
            ));
        }
        let leaf = self.leaf_records();
        if leaf == 0 {
            return err(format!(
                "page of {} bytes cannot hold one {}-byte record",
                self.page_bytes,
                self.record_bytes()
            ));
        }
        if leaf > u16::MAX as usize {
            return err(format!("{leaf} records per leaf overflows the entry count"));
        }
        if self.bloom_bits_per_key == 0 || self.bloom_hashes == 0 {
            return err("bloom parameters must be positive".into());
        }
        if self.read_heads == 0 {
            return err("at least one read head is required".into());
        }
        self.cost.validate()
    }
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

/// Plain ordered map holding the fully resolved state of an operation sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OracleMap {
    map: BTreeMap<Key, Value>,
}

impl OracleMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, d: &DeltaRecord) {
        match &d.op {
            Op::Put(v) | Op::Update(v) => {
                self.map.insert(d.key.clone(), v.clone());
            }
            Op::Delete => {
                self.map.remove(&d.key);
            }
        }
    }

    pub fn get(&self, key: &Key) -> Option<&Value> {
        self.map.get(key)
    }

    pub fn range(&self, range: &KeyRange) -> Vec<(Key, Value)> {
        self.map
            .range(range.low.clone()..=range.high.clone())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Key, &Value)> {
        self.map.iter()
    }
}

/// Functional form of [`OracleMap::apply`].
pub fn oracle_apply(mut oracle: OracleMap, d: &DeltaRecord) -> OracleMap {
    oracle.apply(d);
    oracle
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(v: u64) -> Key {
        Key::from_u64(v, 8)
    }

    fn v(x: u64) -> Value {
        Value::from_u64(x, 16)
    }

    #[test]
    fn oracle_put_delete_update() {
        let o = oracle_apply(OracleMap::new(), &DeltaRecord::put(k(5), v(1), 1));
        assert_eq!(o.get(&k(5)), Some(&v(1)));
        let o2 = oracle_apply(o.clone(), &DeltaRecord::delete(k(5), 2));
        assert!(o2.is_empty());
        let o3 = oracle_apply(o, &DeltaRecord::update(k(5), v(2), 3));
        assert_eq!(o3.get(&k(5)), Some(&v(2)));
        let o4 = oracle_apply(OracleMap::new(), &DeltaRecord::update(k(9), v(3), 4));
        assert_eq!(o4.get(&k(9)), Some(&v(3)));
    }

    #[test]
    fn codec_round_trips_every_op() {
        let c = RecordCodec::new(8, 16);
        for rec in [
            DeltaRecord::put(k(7), v(99), 42),
            DeltaRecord::delete(k(7), 43),
            DeltaRecord::update(k(u64::MAX), v(1), u64::MAX),
        ] {
            let bytes = c.encode(&rec).unwrap();
            assert_eq!(bytes.len(), c.encoded_len());
            assert_eq!(c.decode(&bytes).unwrap(), rec);
        }
    }

    #[test]
    fn codec_layout_is_tag_seq_key_value() {
        let c = RecordCodec::new(2, 3);
        let rec = DeltaRecord::update(Key::new(vec![0xAA, 0xBB]), Value::new(vec![1, 2, 3]), 0x0102);
        let bytes = c.encode(&rec).unwrap();
        assert_eq!(bytes, vec![2, 0, 0, 0, 0, 0, 0, 1, 2, 0xAA, 0xBB, 1, 2, 3]);
        let del = c.encode(&DeltaRecord::delete(Key::new(vec![1, 1]), 9)).unwrap();
        assert_eq!(&del[11..], &[0, 0, 0]);
    }

    #[test]
    fn codec_rejects_truncation_and_bad_tags() {
        let c = RecordCodec::new(8, 16);
        let mut bytes = c.encode(&DeltaRecord::put(k(1), v(1), 1)).unwrap();
        assert!(matches!(c.decode(&bytes[..bytes.len() - 1]), Err(Error::Codec(_))));
        bytes[0] = 7;
        assert!(matches!(c.decode(&bytes), Err(Error::Codec(_))));
    }

    #[test]
    fn codec_rejects_wrong_lengths() {
        let c = RecordCodec::new(8, 16);
        let short = DeltaRecord::put(Key::new(vec![1, 2]), v(1), 1);
        assert!(matches!(c.encode(&short), Err(Error::KeyLength { expected: 8, got: 2 })));
        let long_val = DeltaRecord::put(k(1), Value::new(vec![0; 17]), 1);
        assert!(matches!(c.encode(&long_val), Err(Error::ValueLength { .. })));
    }

    #[test]
    fn key_u64_order_matches_integer_order() {
        assert!(k(2) < k(15));
        assert!(k(255) < k(256));
        assert_eq!(k(12345).to_u64(), 12345);
        assert_eq!(Key::from_u64(0x0102, 2).as_bytes(), &[1, 2]);
        assert_eq!(Key::from_u64(7, 10).to_u64(), 7);
    }

    #[test]
    fn config_validation() {
        assert!(Config::default().validate().is_ok());
        let bad = |f: fn(&mut Config)| {
            let mut c = Config::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.stree_fanout = 1));
        assert!(bad(|c| c.dtree_fanout = 3));
        assert!(bad(|c| c.sigma = 5));
        assert!(bad(|c| c.page_bytes = 512));
        assert!(bad(|c| c.cost.t_seek = 0.0));
        assert!(bad(|c| c.value_bytes = 5000));
    }

    #[test]
    fn default_leaf_capacity_and_override() {
        let mut c = Config::default();
        assert_eq!(c.record_bytes(), 145);
        assert_eq!(c.leaf_records(), (4096 - 3) / 145);
        c.leaf_capacity = Some(4);
        assert_eq!(c.leaf_records(), 4);
        assert_eq!(c.sigma_from_bytes(145 * 100 + 7), 100);
    }

    #[test]
    fn key_range_rejects_inverted_bounds() {
        assert!(KeyRange::new(k(5), k(4)).is_err());
        let r = KeyRange::new(k(4), k(5)).unwrap();
        assert!(r.contains(&k(4)) && r.contains(&k(5)) && !r.contains(&k(6)));
    }
}
