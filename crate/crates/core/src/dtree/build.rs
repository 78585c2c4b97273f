//! Bottom-up bulk loading.
//!
//! The builder reserves an extent large enough for the declared record bound,
//! streams full leaves into it, then appends the internal levels and returns
//! the unused tail of the extent to the pager.

use crate::bloom::{key_hash, BloomFilter};
use crate::error::{Error, Result};
use crate::pager::{Extent, PageId};
use crate::types::{DeltaRecord, Key};

use super::node::{DNode, LEAF_TAG};
use super::{Built, DTree, Io, Layout};

/// Internal pages above `leaves` leaves when every level is packed B to a node.
pub fn internal_pages(leaves: u64, fanout: usize) -> u64 {
    let mut n = leaves;
    let mut total = 0;
    while n > 1 {
        n = n.div_ceil(fanout as u64);
        total += n;
    }
    total
}

/// Total pages of a bulk-built d-tree holding `records` records.
pub fn tree_pages(records: u64, layout: &Layout) -> u64 {
    let leaves = records.div_ceil(layout.leaf_records as u64);
    leaves + internal_pages(leaves, layout.fanout)
}

pub struct DTreeBuilder {
    layout: Layout,
    extent: Option<Extent>,
    leaf_page: Vec<u8>,
    leaf_len: usize,
    leaves_written: u64,
    /// First key of every written leaf, used as separators.
    leaf_firsts: Vec<Key>,
    records: u64,
    min_key: Option<Key>,
    last_key: Option<Key>,
    hashes: Vec<u128>,
}

impl DTreeBuilder {
    /// Reserves room for at most `max_records` records.
    pub fn new(io: &mut Io<'_>, max_records: u64) -> Result<Self> {
        let layout = *io.layout;
        let extent = match tree_pages(max_records, &layout) {
            0 => None,
            n => Some(io.pager.allocate_extent(n)?),
        };
        Ok(DTreeBuilder {
            layout,
            extent,
            leaf_page: Self::fresh_leaf(&layout),
            leaf_len: 0,
            leaves_written: 0,
            leaf_firsts: Vec::new(),
            records: 0,
            min_key: None,
            last_key: None,
            hashes: Vec::new(),
        })
    }

    fn fresh_leaf(layout: &Layout) -> Vec<u8> {
        let mut p = Vec::with_capacity(layout.page_bytes);
        p.push(LEAF_TAG);
        p.extend_from_slice(&[0, 0]);
        p
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn push(&mut self, rec: &DeltaRecord, io: &mut Io<'_>) -> Result<()> {
        if let Some(last) = &self.last_key {
            if &rec.key <= last {
                return Err(Error::Unsorted);
            }
        }
        if self.leaf_len == self.layout.leaf_records {
            self.write_leaf(io)?;
        }
        if self.leaf_len == 0 {
            self.leaf_firsts.push(rec.key.clone());
        }
        self.layout.codec.encode_into(rec, &mut self.leaf_page)?;
        self.leaf_len += 1;
        self.records += 1;
        if self.min_key.is_none() {
            self.min_key = Some(rec.key.clone());
        }
        self.hashes.push(key_hash(&rec.key));
        self.last_key = Some(rec.key.clone());
        Ok(())
    }

    fn reserved(&self) -> Result<Extent> {
        self.extent.ok_or_else(|| {
            Error::InvalidArgument("d-tree builder received more records than reserved".into())
        })
    }

    fn write_page(&self, offset: u64, page: &[u8], io: &mut Io<'_>) -> Result<PageId> {
        let extent = self.reserved()?;
        if offset >= extent.len {
            return Err(Error::InvalidArgument(
                "d-tree builder received more records than reserved".into(),
            ));
        }
        io.pager.write_pages(extent, offset, &[page], io.stats)?;
        Ok(extent.start + offset)
    }

    fn write_leaf(&mut self, io: &mut Io<'_>) -> Result<()> {
        let count = (self.leaf_len as u16).to_be_bytes();
        self.leaf_page[1] = count[0];
        self.leaf_page[2] = count[1];
        let mut page = std::mem::replace(&mut self.leaf_page, Self::fresh_leaf(&self.layout));
        debug_assert!(page.len() <= self.layout.page_bytes);
        page.resize(self.layout.page_bytes, 0);
        self.write_page(self.leaves_written, &page, io)?;
        self.leaves_written += 1;
        self.leaf_len = 0;
        Ok(())
    }

    /// Writes the last leaf and the internal levels, trims the extent, and
    /// returns the tree with a filter over every pushed key.
    pub fn finish(mut self, io: &mut Io<'_>) -> Result<Built> {
        let bloom = BloomFilter::from_hashes(
            &self.hashes,
            self.layout.bloom_bits_per_key,
            self.layout.bloom_hashes,
        );
        if self.records == 0 {
            if let Some(e) = self.extent {
                io.pager.truncate_extent(e, 0)?;
            }
            return Ok(Built { tree: DTree::empty(), bloom });
        }
        if self.leaf_len > 0 {
            self.write_leaf(io)?;
        }
        let base = self.reserved()?.start;
        let mut offset = self.leaves_written;
        let mut level: Vec<(Key, PageId)> = std::mem::take(&mut self.leaf_firsts)
            .into_iter()
            .enumerate()
            .map(|(i, k)| (k, base + i as u64))
            .collect();
        let mut height = 1;
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(self.layout.fanout));
            for chunk in level.chunks(self.layout.fanout) {
                let seps = chunk[1..].iter().map(|(k, _)| k.clone()).collect();
                let children = chunk.iter().map(|(_, p)| *p).collect();
                let page = DNode::Internal { seps, children }.encode(&self.layout)?;
                let id = self.write_page(offset, &page, io)?;
                offset += 1;
                next.push((chunk[0].0.clone(), id));
            }
            level = next;
            height += 1;
        }
        let root_page = level[0].1;
        let used = offset;
        let extent = io
            .pager
            .truncate_extent(self.reserved()?, used)?
            .expect("non-empty tree keeps pages");
        debug_assert_eq!(used, tree_pages(self.records, &self.layout));
        let tree = DTree {
            extent: Some(extent),
            root_page,
            leaf_count: self.leaves_written,
            record_count: self.records,
            stored_records: self.records,
            min_key: self.min_key,
            max_key: self.last_key,
            live_start: None,
            height,
        };
        Ok(Built { tree, bloom })
    }
}

/// Builds a d-tree from an ascending record stream.
pub fn bulk_build(records: impl IntoIterator<Item = DeltaRecord>, io: &mut Io<'_>) -> Result<Built> {
    let records: Vec<DeltaRecord> = records.into_iter().collect();
    let mut b = DTreeBuilder::new(io, records.len() as u64)?;
    for r in &records {
        if let Err(e) = b.push(r, io) {
            b.abandon(io)?;
            return Err(e);
        }
    }
    b.finish(io)
}

impl DTreeBuilder {
    /// Gives back a reservation whose build failed before anything was written.
    fn abandon(self, io: &mut Io<'_>) -> Result<()> {
        if let Some(e) = self.extent {
            if self.leaves_written == 0 {
                io.pager.truncate_extent(e, 0)?;
            } else {
                io.pager.free_extent(e)?;
            }
        }
        Ok(())
    }
}
