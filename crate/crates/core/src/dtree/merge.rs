//! Two-way merge of sorted record streams with delta resolution.
//!
//! Resolution when both streams hold a key (`newer` wins):
//! Put and Delete replace whatever is older; an Update over a Put or Delete
//! becomes a Put, over another Update it stays an Update. At the leaf level
//! tombstones are dropped and surviving Updates are materialized as Puts,
//! because nothing older exists below.

use crate::error::{Error, Result};
use crate::types::{DeltaRecord, Key, Op};

/// Pull interface shared by in-memory and on-disk record sources. `C` is the
/// context a pull needs (the pager handle for disk sources, `()` otherwise).
pub trait SortedSource<C: ?Sized> {
    fn peek(&mut self, cx: &mut C) -> Result<Option<&DeltaRecord>>;
    fn next_record(&mut self, cx: &mut C) -> Result<Option<DeltaRecord>>;
}

impl<C: ?Sized, S: SortedSource<C> + ?Sized> SortedSource<C> for &mut S {
    fn peek(&mut self, cx: &mut C) -> Result<Option<&DeltaRecord>> {
        (**self).peek(cx)
    }

    fn next_record(&mut self, cx: &mut C) -> Result<Option<DeltaRecord>> {
        (**self).next_record(cx)
    }
}

/// Resolves a collision between a newer and an older record for the same key.
pub fn resolve(newer: DeltaRecord, older: Option<&DeltaRecord>, at_leaf: bool) -> Option<DeltaRecord> {
    let DeltaRecord { key, op, seq } = newer;
    let op = match (op, older.map(|o| &o.op)) {
        (Op::Update(v), Some(Op::Put(_))) | (Op::Update(v), Some(Op::Delete)) => Op::Put(v),
        (op, _) => op,
    };
    resolve_alone(DeltaRecord { key, op, seq }, at_leaf)
}

/// Applies leaf-level garbage collection to a record with no counterpart.
pub fn resolve_alone(rec: DeltaRecord, at_leaf: bool) -> Option<DeltaRecord> {
    if !at_leaf {
        return Some(rec);
    }
    match rec.op {
        Op::Delete => None,
        Op::Update(v) => Some(DeltaRecord { op: Op::Put(v), ..rec }),
        Op::Put(_) => Some(rec),
    }
}

/// In-memory sorted records.
#[derive(Clone, Debug, Default)]
pub struct MemSource {
    records: Vec<DeltaRecord>,
    pos: usize,
}

impl MemSource {
    pub fn new(records: Vec<DeltaRecord>) -> Self {
        MemSource { records, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.records.len() - self.pos
    }

    pub fn into_rest(mut self) -> Vec<DeltaRecord> {
        self.records.split_off(self.pos)
    }
}

impl<C: ?Sized> SortedSource<C> for MemSource {
    fn peek(&mut self, _cx: &mut C) -> Result<Option<&DeltaRecord>> {
        Ok(self.records.get(self.pos))
    }

    fn next_record(&mut self, _cx: &mut C) -> Result<Option<DeltaRecord>> {
        match self.records.get(self.pos) {
            Some(r) => {
                self.pos += 1;
                Ok(Some(r.clone()))
            }
            None => Ok(None),
        }
    }
}

/// Adapts a plain iterator.
struct IterSource<I: Iterator<Item = DeltaRecord>> {
    it: I,
    head: Option<DeltaRecord>,
}

impl<I: Iterator<Item = DeltaRecord>> SortedSource<()> for IterSource<I> {
    fn peek(&mut self, _cx: &mut ()) -> Result<Option<&DeltaRecord>> {
        if self.head.is_none() {
            self.head = self.it.next();
        }
        Ok(self.head.as_ref())
    }

    fn next_record(&mut self, cx: &mut ()) -> Result<Option<DeltaRecord>> {
        self.peek(cx)?;
        Ok(self.head.take())
    }
}

/// Merges `newer` over `older`. Detects unsorted input lazily.
pub struct Merge<N, O> {
    pub newer: N,
    pub older: O,
    pub at_leaf: bool,
    last: Option<Key>,
}

impl<N, O> Merge<N, O> {
    pub fn new(newer: N, older: O, at_leaf: bool) -> Self {
        Merge { newer, older, at_leaf, last: None }
    }

    /// Like [`Merge::new`] but continuing after `last`, for merges rebuilt step by step.
    pub fn resume(newer: N, older: O, at_leaf: bool, last: Option<Key>) -> Self {
        Merge { newer, older, at_leaf, last }
    }

    pub fn last_key(&self) -> Option<&Key> {
        self.last.as_ref()
    }

    pub fn into_last_key(self) -> Option<Key> {
        self.last
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Newer,
    Older,
    Both,
    Neither,
}

impl<N, O> Merge<N, O> {
    /// Pulls the next input and resolves it. `Ok(None)` means both inputs are
    /// exhausted; `Ok(Some(None))` means a record was consumed and dropped.
    pub fn step<C: ?Sized>(&mut self, cx: &mut C) -> Result<Option<Option<DeltaRecord>>>
    where
        N: SortedSource<C>,
        O: SortedSource<C>,
    {
        let side = {
            let a = self.newer.peek(cx)?.map(|r| r.key.clone());
            let b = self.older.peek(cx)?.map(|r| &r.key);
            match (a, b) {
                (None, None) => Side::Neither,
                (Some(_), None) => Side::Newer,
                (None, Some(_)) => Side::Older,
                (Some(a), Some(b)) => match a.cmp(b) {
                    std::cmp::Ordering::Less => Side::Newer,
                    std::cmp::Ordering::Greater => Side::Older,
                    std::cmp::Ordering::Equal => Side::Both,
                },
            }
        };
        let out = match side {
            Side::Neither => return Ok(None),
            Side::Newer => {
                let n = self.newer.next_record(cx)?.expect("peeked");
                self.check(&n.key)?;
                resolve_alone(n, self.at_leaf)
            }
            Side::Older => {
                let o = self.older.next_record(cx)?.expect("peeked");
                self.check(&o.key)?;
                resolve_alone(o, self.at_leaf)
            }
            Side::Both => {
                let n = self.newer.next_record(cx)?.expect("peeked");
                let o = self.older.next_record(cx)?.expect("peeked");
                self.check(&n.key)?;
                resolve(n, Some(&o), self.at_leaf)
            }
        };
        Ok(Some(out))
    }

    /// Next surviving record.
    pub fn next_record<C: ?Sized>(&mut self, cx: &mut C) -> Result<Option<DeltaRecord>>
    where
        N: SortedSource<C>,
        O: SortedSource<C>,
    {
        loop {
            match self.step(cx)? {
                None => return Ok(None),
                Some(Some(r)) => return Ok(Some(r)),
                Some(None) => continue,
            }
        }
    }

    fn check(&mut self, key: &Key) -> Result<()> {
        if let Some(last) = &self.last {
            if key <= last {
                return Err(Error::Unsorted);
            }
        }
        self.last = Some(key.clone());
        Ok(())
    }
}

/// Iterator form of [`Merge`] over plain record iterators.
pub struct MergeStreams<N: Iterator<Item = DeltaRecord>, O: Iterator<Item = DeltaRecord>> {
    inner: Merge<IterSource<N>, IterSource<O>>,
    failed: bool,
}

impl<N, O> Iterator for MergeStreams<N, O>
where
    N: Iterator<Item = DeltaRecord>,
    O: Iterator<Item = DeltaRecord>,
{
    type Item = Result<DeltaRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.inner.next_record(&mut ()) {
            Ok(r) => r.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

fn merge_impl<N, O>(newer: N, older: O, at_leaf: bool) -> MergeStreams<N::IntoIter, O::IntoIter>
where
    N: IntoIterator<Item = DeltaRecord>,
    O: IntoIterator<Item = DeltaRecord>,
{
    MergeStreams {
        inner: Merge::new(
            IterSource { it: newer.into_iter(), head: None },
            IterSource { it: older.into_iter(), head: None },
            at_leaf,
        ),
        failed: false,
    }
}

/// Merges two ascending streams; `newer` wins on equal keys and tombstones are kept.
pub fn merge_streams<N, O>(newer: N, older: O) -> MergeStreams<N::IntoIter, O::IntoIter>
where
    N: IntoIterator<Item = DeltaRecord>,
    O: IntoIterator<Item = DeltaRecord>,
{
    merge_impl(newer, older, false)
}

/// Merge for the leaf level: tombstones vanish and Updates become Puts.
pub fn merge_streams_at_leaf<N, O>(newer: N, older: O) -> MergeStreams<N::IntoIter, O::IntoIter>
where
    N: IntoIterator<Item = DeltaRecord>,
    O: IntoIterator<Item = DeltaRecord>,
{
    merge_impl(newer, older, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Value;

    fn k(v: u64) -> Key {
        Key::from_u64(v, 8)
    }

    fn val(v: u64) -> Value {
        Value::from_u64(v, 8)
    }

    fn run(
        it: MergeStreams<
            std::vec::IntoIter<DeltaRecord>,
            std::vec::IntoIter<DeltaRecord>,
        >,
    ) -> Result<Vec<DeltaRecord>> {
        it.collect()
    }

    #[test]
    fn newer_put_wins() {
        let out = run(merge_streams(
            vec![DeltaRecord::put(k(5), val(2), 10)],
            vec![DeltaRecord::put(k(5), val(1), 1), DeltaRecord::put(k(7), val(3), 2)],
        ))
        .unwrap();
        assert_eq!(out, vec![DeltaRecord::put(k(5), val(2), 10), DeltaRecord::put(k(7), val(3), 2)]);
    }

    #[test]
    fn delete_keeps_tombstone_above_leaf() {
        let out = run(merge_streams(
            vec![DeltaRecord::delete(k(5), 9)],
            vec![DeltaRecord::put(k(5), val(1), 1)],
        ))
        .unwrap();
        assert_eq!(out, vec![DeltaRecord::delete(k(5), 9)]);
        let leaf = run(merge_streams_at_leaf(
            vec![DeltaRecord::delete(k(5), 9)],
            vec![DeltaRecord::put(k(5), val(1), 1)],
        ))
        .unwrap();
        assert!(leaf.is_empty());
    }

    #[test]
    fn update_resolution() {
        let over_put = run(merge_streams(
            vec![DeltaRecord::update(k(1), val(2), 5)],
            vec![DeltaRecord::put(k(1), val(1), 1)],
        ))
        .unwrap();
        assert_eq!(over_put, vec![DeltaRecord::put(k(1), val(2), 5)]);

        let alone =
            run(merge_streams(vec![DeltaRecord::update(k(1), val(2), 5)], vec![])).unwrap();
        assert_eq!(alone, vec![DeltaRecord::update(k(1), val(2), 5)]);

        let over_update = run(merge_streams(
            vec![DeltaRecord::update(k(1), val(3), 6)],
            vec![DeltaRecord::update(k(1), val(2), 5)],
        ))
        .unwrap();
        assert_eq!(over_update, vec![DeltaRecord::update(k(1), val(3), 6)]);

        let over_delete = run(merge_streams(
            vec![DeltaRecord::update(k(1), val(3), 6)],
            vec![DeltaRecord::delete(k(1), 5)],
        ))
        .unwrap();
        assert_eq!(over_delete, vec![DeltaRecord::put(k(1), val(3), 6)]);

        let at_leaf =
            run(merge_streams_at_leaf(vec![DeltaRecord::update(k(1), val(2), 5)], vec![]))
                .unwrap();
        assert_eq!(at_leaf, vec![DeltaRecord::put(k(1), val(2), 5)]);
    }

    #[test]
    fn unsorted_input_is_an_error() {
        let out = run(merge_streams(
            vec![DeltaRecord::put(k(5), val(1), 1), DeltaRecord::put(k(3), val(1), 2)],
            vec![],
        ));
        assert!(matches!(out, Err(Error::Unsorted)));
        let dup = run(merge_streams(
            vec![],
            vec![DeltaRecord::put(k(3), val(1), 1), DeltaRecord::put(k(3), val(1), 2)],
        ));
        assert!(matches!(dup, Err(Error::Unsorted)));
        let hidden = run(merge_streams_at_leaf(
            vec![DeltaRecord::put(k(5), val(1), 1), DeltaRecord::delete(k(3), 2)],
            vec![],
        ));
        assert!(matches!(hidden, Err(Error::Unsorted)));
    }
}
