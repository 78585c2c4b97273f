//! D-node page encoding.
//!
//! Leaf: `0u8 ∥ count u16 ∥ count encoded records`.
//! Internal: `1u8 ∥ count u16 ∥ count × (separator key ∥ child u64) ∥ trailing child u64`,
//! where the child paired with separator `s` holds keys below `s` and the trailing
//! child holds keys at or above the last separator.

use crate::error::{Error, Result};
use crate::pager::PageId;
use crate::types::{DeltaRecord, Key, CHILD_REF_BYTES, NODE_HEADER_BYTES};

use super::Layout;

pub const LEAF_TAG: u8 = 0;
pub const INTERNAL_TAG: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DNode {
    Leaf(Vec<DeltaRecord>),
    Internal { seps: Vec<Key>, children: Vec<PageId> },
}

impl DNode {
    pub fn encode(&self, layout: &Layout) -> Result<Vec<u8>> {
        let mut page = Vec::with_capacity(layout.page_bytes);
        match self {
            DNode::Leaf(records) => {
                if records.len() > layout.leaf_records {
                    return Err(Error::InvalidArgument(format!(
                        "{} records exceed leaf capacity {}",
                        records.len(),
                        layout.leaf_records
                    )));
                }
                page.push(LEAF_TAG);
                page.extend_from_slice(&(records.len() as u16).to_be_bytes());
                for r in records {
                    layout.codec.encode_into(r, &mut page)?;
                }
            }
            DNode::Internal { seps, children } => {
                if children.len() != seps.len() + 1 || children.len() > layout.fanout {
                    return Err(Error::InvalidArgument(format!(
                        "internal node with {} separators and {} children (fanout {})",
                        seps.len(),
                        children.len(),
                        layout.fanout
                    )));
                }
                page.push(INTERNAL_TAG);
                page.extend_from_slice(&(seps.len() as u16).to_be_bytes());
                for (s, c) in seps.iter().zip(children) {
                    page.extend_from_slice(s.as_bytes());
                    page.extend_from_slice(&c.to_be_bytes());
                }
                page.extend_from_slice(&children[seps.len()].to_be_bytes());
            }
        }
        debug_assert!(page.len() <= layout.page_bytes);
        page.resize(layout.page_bytes, 0);
        Ok(page)
    }

    pub fn decode(page: &[u8], layout: &Layout) -> Result<Self> {
        let (tag, count) = header(page)?;
        match tag {
            LEAF_TAG => {
                let rb = layout.record_bytes();
                check_len(page, NODE_HEADER_BYTES + count * rb)?;
                let records = (0..count)
                    .map(|i| {
                        let off = NODE_HEADER_BYTES + i * rb;
                        layout.codec.decode(&page[off..off + rb])
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(DNode::Leaf(records))
            }
            INTERNAL_TAG => {
                let kb = layout.key_bytes();
                let entry = kb + CHILD_REF_BYTES;
                check_len(page, NODE_HEADER_BYTES + count * entry + CHILD_REF_BYTES)?;
                let mut seps = Vec::with_capacity(count);
                let mut children = Vec::with_capacity(count + 1);
                for i in 0..count {
                    let off = NODE_HEADER_BYTES + i * entry;
                    seps.push(Key::new(&page[off..off + kb]));
                    children.push(read_u64(&page[off + kb..]));
                }
                children.push(read_u64(&page[NODE_HEADER_BYTES + count * entry..]));
                Ok(DNode::Internal { seps, children })
            }
            t => Err(Error::Codec(format!("unknown d-node tag {t}"))),
        }
    }
}

fn header(page: &[u8]) -> Result<(u8, usize)> {
    check_len(page, NODE_HEADER_BYTES)?;
    Ok((page[0], u16::from_be_bytes([page[1], page[2]]) as usize))
}

fn check_len(page: &[u8], need: usize) -> Result<()> {
    if page.len() < need {
        Err(Error::Codec(format!("d-node needs {need} bytes, page has {}", page.len())))
    } else {
        Ok(())
    }
}

fn read_u64(b: &[u8]) -> u64 {
    u64::from_be_bytes(b[..8].try_into().expect("8 bytes"))
}

/// Index of the child to follow for `key` in an internal node.
pub fn route(seps: &[Key], key: &Key) -> usize {
    seps.partition_point(|s| s <= key)
}

/// Searches a raw leaf page for `key` without decoding the other records.
pub fn leaf_find(page: &[u8], layout: &Layout, key: &Key) -> Result<Option<DeltaRecord>> {
    let (tag, count) = header(page)?;
    if tag != LEAF_TAG {
        return Err(Error::Codec("expected a leaf page".into()));
    }
    let rb = layout.record_bytes();
    let kb = layout.key_bytes();
    check_len(page, NODE_HEADER_BYTES + count * rb)?;
    let key_at = |i: usize| {
        let off = NODE_HEADER_BYTES + i * rb + 9;
        &page[off..off + kb]
    };
    let (mut lo, mut hi) = (0usize, count);
    while lo < hi {
        let mid = (lo + hi) / 2;
        match key_at(mid).cmp(key.as_bytes()) {
            std::cmp::Ordering::Less => lo = mid + 1,
            std::cmp::Ordering::Greater => hi = mid,
            std::cmp::Ordering::Equal => {
                let off = NODE_HEADER_BYTES + mid * rb;
                return layout.codec.decode(&page[off..off + rb]).map(Some);
            }
        }
    }
    Ok(None)
}
