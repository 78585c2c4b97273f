//! On-disk manifest: configuration, s-tree, d-tree metadata, filters and the
//! root buffer, followed by a checksum. Replaced atomically by rename.
//!
//! Layout (all integers big-endian): `"NBT1"` ∥ version u32 ∥ config ∥
//! has_deletes u8 ∥ seq u64 ∥ next_page u64 ∥ root u32 ∥ slots u32 ∥ slot* ∥
//! buffered u64 ∥ record* ∥ xxh3-64 of everything before.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use xxhash_rust::xxh3::xxh3_64;

use crate::bloom::BloomFilter;
use crate::dtree::{DTree, Layout, LiveStart, RootBuffer};
use crate::error::{Error, Result};
use crate::pager::{Extent, Pager};
use crate::types::{Config, Key, Mode};

use super::stree::{NodeData, SNode, STree};
use super::NBTree;

pub const MANIFEST: &str = "manifest";
pub const PAGES: &str = "pages.dat";
const MAGIC: &[u8; 4] = b"NBT1";
pub const VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Encoding helpers
// ---------------------------------------------------------------------------

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn key(&mut self, k: &Key) {
        self.0.extend_from_slice(k.as_bytes());
    }
    fn opt_key(&mut self, k: Option<&Key>) {
        match k {
            Some(k) => {
                self.u8(1);
                self.key(k);
            }
            None => self.u8(0),
        }
    }
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
    key_bytes: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptManifest(msg.into())
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()?;
        self.take(usize::try_from(n).map_err(|_| corrupt("length overflow"))?)
    }
    fn key(&mut self) -> Result<Key> {
        Ok(Key::new(self.take(self.key_bytes)?.to_vec()))
    }
    fn opt_key(&mut self) -> Result<Option<Key>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.key()?)),
            t => Err(corrupt(format!("bad option tag {t}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Config block
// ---------------------------------------------------------------------------

fn config_fields(c: &Config) -> [(&'static str, u64); 10] {
    [
        ("page_bytes", c.page_bytes as u64),
        ("dtree_fanout", c.dtree_fanout as u64),
        ("stree_fanout", c.stree_fanout as u64),
        ("sigma", c.sigma as u64),
        ("key_bytes", c.key_bytes as u64),
        ("value_bytes", c.value_bytes as u64),
        ("leaf_records", c.leaf_records() as u64),
        ("bloom_bits_per_key", c.bloom_bits_per_key as u64),
        ("bloom_hashes", c.bloom_hashes as u64),
        ("mode", matches!(c.mode, Mode::Advanced) as u64),
    ]
}

// ---------------------------------------------------------------------------
// Save
// ---------------------------------------------------------------------------

fn put_dtree(o: &mut Out, t: &DTree) {
    match t.extent {
        Some(e) => {
            o.u8(1);
            o.u64(e.start);
            o.u64(e.len);
        }
        None => o.u8(0),
    }
    o.u64(t.root_page);
    o.u64(t.leaf_count);
    o.u64(t.record_count);
    o.u64(t.stored_records);
    o.opt_key(t.min_key.as_ref());
    o.opt_key(t.max_key.as_ref());
    match &t.live_start {
        Some(ls) => {
            o.u8(1);
            o.key(&ls.key);
            o.u64(ls.leaf);
        }
        None => o.u8(0),
    }
    o.u32(t.height);
}

pub(crate) fn encode(t: &NBTree) -> Result<Vec<u8>> {
    debug_assert!(t.cascade.is_none());
    let mut o = Out(Vec::new());
    o.0.extend_from_slice(MAGIC);
    o.u32(VERSION);
    for (_, v) in config_fields(&t.config) {
        o.u64(v);
    }
    o.u8(t.has_deletes as u8);
    o.u64(t.seq);
    o.u64(t.pager.next_page());
    let tree = &*t.committed;
    o.u32(tree.root);
    o.u32(tree.slots().len() as u32);
    for slot in tree.slots() {
        let Some(n) = slot else {
            o.u8(0);
            continue;
        };
        o.u8(1);
        o.u32(n.s_keys.len() as u32);
        for k in &n.s_keys {
            o.key(k);
        }
        o.u32(n.children.len() as u32);
        for &c in &n.children {
            o.u32(c);
        }
        match &n.data {
            NodeData::Buffer => o.u8(0),
            NodeData::Disk { tree, bloom } => {
                o.u8(1);
                put_dtree(&mut o, tree);
                match bloom {
                    Some(b) => {
                        o.u8(1);
                        o.bytes(&b.to_bytes());
                    }
                    None => o.u8(0),
                }
            }
        }
    }
    let codec = t.layout.codec;
    o.u64(t.active.len() as u64);
    for r in t.active.iter() {
        codec.encode_into(r, &mut o.0)?;
    }
    let sum = xxh3_64(&o.0);
    o.u64(sum);
    Ok(o.0)
}

pub(crate) fn save(t: &NBTree) -> Result<()> {
    let dir = t.dir.as_ref().expect("file-backed index");
    let bytes = encode(t)?;
    t.pager.sync()?;
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(MANIFEST))?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Load
// ---------------------------------------------------------------------------

fn get_dtree(i: &mut In<'_>) -> Result<DTree> {
    let extent = match i.u8()? {
        0 => None,
        1 => Some(Extent { start: i.u64()?, len: i.u64()? }),
        t => return Err(corrupt(format!("bad extent tag {t}"))),
    };
    let root_page = i.u64()?;
    let leaf_count = i.u64()?;
    let record_count = i.u64()?;
    let stored_records = i.u64()?;
    let min_key = i.opt_key()?;
    let max_key = i.opt_key()?;
    let live_start = match i.u8()? {
        0 => None,
        1 => Some(LiveStart { key: i.key()?, leaf: i.u64()? }),
        t => return Err(corrupt(format!("bad live-start tag {t}"))),
    };
    let height = i.u32()?;
    Ok(DTree {
        extent,
        root_page,
        leaf_count,
        record_count,
        stored_records,
        min_key,
        max_key,
        live_start,
        height,
    })
}

/// Reads the layout-defining configuration stored in a manifest. Knobs that
/// are not stored (deamortization, read heads, cost parameters) take defaults.
pub(crate) fn stored_config(bytes: &[u8]) -> Result<Config> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing magic"));
    }
    let version = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::ManifestVersion { found: version, supported: VERSION });
    }
    let mut i = In { buf: bytes, pos: 8, key_bytes: 0 };
    let mut v = [0u64; 10];
    for x in v.iter_mut() {
        *x = i.u64()?;
    }
    let us = |x: u64| usize::try_from(x).map_err(|_| corrupt("config field overflow"));
    Ok(Config {
        page_bytes: us(v[0])?,
        dtree_fanout: us(v[1])?,
        stree_fanout: us(v[2])?,
        sigma: us(v[3])?,
        key_bytes: us(v[4])?,
        value_bytes: us(v[5])?,
        leaf_capacity: Some(us(v[6])?),
        bloom_bits_per_key: us(v[7])?,
        bloom_hashes: u32::try_from(v[8]).map_err(|_| corrupt("config field overflow"))?,
        mode: if v[9] == 1 { Mode::Advanced } else { Mode::Basic },
        ..Config::default()
    })
}

pub(crate) struct Decoded {
    pub has_deletes: bool,
    pub seq: u64,
    pub next_page: u64,
    pub tree: STree,
    pub active: RootBuffer,
}

pub(crate) fn decode(bytes: &[u8], config: &Config) -> Result<Decoded> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing magic"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 8);
    let version = u32::from_be_bytes(body[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::ManifestVersion { found: version, supported: VERSION });
    }
    if xxh3_64(body) != u64::from_be_bytes(sum.try_into().expect("8 bytes")) {
        return Err(corrupt("checksum mismatch"));
    }
    let mut i = In { buf: body, pos: 8, key_bytes: config.key_bytes };
    for (name, want) in config_fields(config) {
        let got = i.u64()?;
        if got != want {
            return Err(Error::ConfigMismatch(format!("{name}: stored {got}, requested {want}")));
        }
    }
    let has_deletes = i.u8()? != 0;
    let seq = i.u64()?;
    let next_page = i.u64()?;
    let root = i.u32()?;
    let slots = i.u32()? as usize;
    let mut nodes = Vec::with_capacity(slots.min(1 << 20));
    for _ in 0..slots {
        if i.u8()? == 0 {
            nodes.push(None);
            continue;
        }
        let nk = i.u32()? as usize;
        let s_keys = (0..nk).map(|_| i.key()).collect::<Result<Vec<_>>>()?;
        let nc = i.u32()? as usize;
        let children = (0..nc).map(|_| i.u32()).collect::<Result<Vec<_>>>()?;
        let data = match i.u8()? {
            0 => NodeData::Buffer,
            1 => {
                let tree = get_dtree(&mut i)?;
                let bloom = match i.u8()? {
                    0 => None,
                    _ => Some(Arc::new(BloomFilter::from_bytes(i.bytes()?)?)),
                };
                NodeData::Disk { tree, bloom }
            }
            t => return Err(corrupt(format!("bad node data tag {t}"))),
        };
        nodes.push(Some(SNode { s_keys, children, data }));
    }
    for n in nodes.iter().flatten() {
        if n.children.iter().any(|&c| nodes.get(c as usize).is_none_or(|s| s.is_none())) {
            return Err(corrupt("child link to missing s-node"));
        }
    }
    if nodes.get(root as usize).is_none_or(|s| s.is_none()) {
        return Err(corrupt("missing root s-node"));
    }
    let codec = config.codec();
    let rb = codec.encoded_len();
    let count = i.u64()?;
    let mut active = RootBuffer::new();
    for _ in 0..count {
        active.insert(codec.decode(i.take(rb)?)?);
    }
    if i.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Decoded { has_deletes, seq, next_page, tree: STree::from_parts(nodes, root), active })
}

pub(crate) fn load(dir: &Path, config: Config) -> Result<NBTree> {
    let bytes = fs::read(dir.join(MANIFEST))?;
    let d = decode(&bytes, &config)?;
    let extents: Vec<Extent> =
        d.tree.slots().iter().flatten().filter_map(|n| n.dtree().and_then(|t| t.extent)).collect();
    let pager = Pager::open_file(&dir.join(PAGES), config.page_bytes, d.next_page, &extents)?;
    let mut t = NBTree::fresh(config, Arc::new(pager), Some(dir.to_path_buf()));
    t.layout = Layout::from_config(&t.config);
    t.has_deletes = d.has_deletes;
    t.seq = d.seq;
    t.committed = Arc::new(d.tree);
    t.active = d.active;
    t.checkpointing = true;
    Ok(t)
}
