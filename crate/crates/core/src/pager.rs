//! Page store with append-only extent allocation and cursor-based seek accounting.
//!
//! Every page access goes through one of the cursors in an [`IoStats`]: a seek is
//! charged whenever the accessed page is not the successor of that cursor's last
//! page. Pages are write-once; a page that already holds data cannot be rewritten.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::Path;

use parking_lot::RwLock;

use crate::error::{Error, Result};
use crate::types::CostParams;

pub type PageId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Extent {
    pub start: PageId,
    pub len: u64,
}

impl Extent {
    pub fn end(&self) -> PageId {
        self.start + self.len
    }

    pub fn contains(&self, page: PageId) -> bool {
        page >= self.start && page < self.end()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtentState {
    Live,
    Freed,
}

/// Read cursor selector. With fewer read heads than cursors the cursors share heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cursor {
    A,
    B,
}

/// Plain counter snapshot, used for per-operation deltas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IoCounts {
    pub seeks: u64,
    pub pages_read: u64,
    pub pages_written: u64,
}

impl IoCounts {
    pub fn since(&self, earlier: &IoCounts) -> IoCounts {
        IoCounts {
            seeks: self.seeks - earlier.seeks,
            pages_read: self.pages_read - earlier.pages_read,
            pages_written: self.pages_written - earlier.pages_written,
        }
    }

    pub fn pages(&self) -> u64 {
        self.pages_read + self.pages_written
    }

    pub fn modeled_time(&self, p: &CostParams) -> ModeledTime {
        modeled_time(self, p)
    }
}

/// Seek and transfer counters plus the last page touched by each head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IoStats {
    pub seeks: u64,
    pub seq_read_pages: u64,
    pub seq_write_pages: u64,
    read_heads: Vec<Option<PageId>>,
    write_head: Option<PageId>,
}

impl Default for IoStats {
    fn default() -> Self {
        IoStats::new(2)
    }
}

impl IoStats {
    pub fn new(read_heads: usize) -> Self {
        IoStats {
            seeks: 0,
            seq_read_pages: 0,
            seq_write_pages: 0,
            read_heads: vec![None; read_heads.max(1)],
            write_head: None,
        }
    }

    pub fn counts(&self) -> IoCounts {
        IoCounts {
            seeks: self.seeks,
            pages_read: self.seq_read_pages,
            pages_written: self.seq_write_pages,
        }
    }

    pub fn head_position(&self, cursor: Cursor) -> Option<PageId> {
        self.read_heads[self.head_index(cursor)]
    }

    pub fn write_position(&self) -> Option<PageId> {
        self.write_head
    }

    fn head_index(&self, cursor: Cursor) -> usize {
        let i = match cursor {
            Cursor::A => 0,
            Cursor::B => 1,
        };
        i % self.read_heads.len()
    }

    fn touch(head: &mut Option<PageId>, page: PageId, seeks: &mut u64) {
        let sequential = matches!(*head, Some(last) if last + 1 == page);
        if !sequential {
            *seeks += 1;
        }
        *head = Some(page);
    }

    pub(crate) fn charge_read(&mut self, cursor: Cursor, page: PageId) {
        let i = self.head_index(cursor);
        Self::touch(&mut self.read_heads[i], page, &mut self.seeks);
        self.seq_read_pages += 1;
    }

    pub(crate) fn charge_write(&mut self, page: PageId) {
        Self::touch(&mut self.write_head, page, &mut self.seeks);
        self.seq_write_pages += 1;
    }
}

/// Modeled seconds, split by component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModeledTime {
    pub seek_s: f64,
    pub read_s: f64,
    pub write_s: f64,
}

impl ModeledTime {
    pub fn total(&self) -> f64 {
        self.seek_s + self.read_s + self.write_s
    }
}

pub fn modeled_time(c: &IoCounts, p: &CostParams) -> ModeledTime {
    ModeledTime {
        seek_s: c.seeks as f64 * p.t_seek,
        read_s: c.pages_read as f64 * p.t_seq_r,
        write_s: c.pages_written as f64 * p.t_seq_w,
    }
}

// ---------------------------------------------------------------------------
// Backing stores
// ---------------------------------------------------------------------------

trait Backing: Send + Sync {
    fn read(&self, page: PageId, buf: &mut [u8]) -> Result<()>;
    fn write(&mut self, page: PageId, data: &[u8]) -> Result<()>;
    fn ensure_capacity(&mut self, pages: u64) -> Result<()>;
    fn release(&mut self, _extent: Extent) {}
    fn sync(&self) -> Result<()> {
        Ok(())
    }
}

struct MemBacking {
    pages: Vec<Option<Box<[u8]>>>,
    limit: Option<u64>,
}

impl Backing for MemBacking {
    fn read(&self, page: PageId, buf: &mut [u8]) -> Result<()> {
        match self.pages.get(page as usize) {
            Some(Some(p)) => {
                buf.copy_from_slice(p);
                Ok(())
            }
            _ => Err(Error::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("page {page} holds no data"),
            ))),
        }
    }

    fn write(&mut self, page: PageId, data: &[u8]) -> Result<()> {
        let i = page as usize;
        if self.pages.len() <= i {
            self.pages.resize_with(i + 1, || None);
        }
        self.pages[i] = Some(data.into());
        Ok(())
    }

    fn ensure_capacity(&mut self, pages: u64) -> Result<()> {
        match self.limit {
            Some(l) if pages > l => Err(Error::StorageFull { requested: pages }),
            _ => Ok(()),
        }
    }

    fn release(&mut self, extent: Extent) {
        // Freed pages are never read again, so the memory can go.
        for p in extent.start..extent.end() {
            if let Some(slot) = self.pages.get_mut(p as usize) {
                *slot = None;
            }
        }
    }
}

struct FileBacking {
    file: File,
    page_bytes: usize,
}

impl Backing for FileBacking {
    fn read(&self, page: PageId, buf: &mut [u8]) -> Result<()> {
        self.file.read_exact_at(buf, page * self.page_bytes as u64)?;
        Ok(())
    }

    fn write(&mut self, page: PageId, data: &[u8]) -> Result<()> {
        self.file
            .write_all_at(data, page * self.page_bytes as u64)
            .map_err(|e| match e.raw_os_error() {
                Some(28) => Error::StorageFull { requested: page + 1 },
                _ => Error::Io(e),
            })
    }

    fn ensure_capacity(&mut self, _pages: u64) -> Result<()> {
        Ok(())
    }

    fn sync(&self) -> Result<()> {
        self.file.sync_data()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Pager
// ---------------------------------------------------------------------------

struct Inner {
    backing: Box<dyn Backing>,
    next_page: PageId,
    /// Every extent ever handed out, keyed by start page.
    extents: BTreeMap<PageId, (u64, ExtentState)>,
    /// Write-once marks, one bit per page.
    written: Vec<u64>,
}

impl Inner {
    fn is_written(&self, page: PageId) -> bool {
        let (w, b) = ((page / 64) as usize, page % 64);
        self.written.get(w).is_some_and(|x| x & (1 << b) != 0)
    }

    fn mark_written(&mut self, page: PageId) {
        let (w, b) = ((page / 64) as usize, page % 64);
        if self.written.len() <= w {
            self.written.resize(w + 1, 0);
        }
        self.written[w] |= 1 << b;
    }

    fn live(&self, extent: Extent) -> Result<()> {
        match self.extents.get(&extent.start) {
            Some((len, ExtentState::Live)) if *len == extent.len => Ok(()),
            _ => Err(Error::FreedExtent(extent.start)),
        }
    }
}

/// Single-writer, multi-reader page store. Readers pass their own [`IoStats`].
pub struct Pager {
    page_bytes: usize,
    inner: RwLock<Inner>,
}

impl Pager {
    pub fn in_memory(page_bytes: usize) -> Self {
        Self::with_backing(page_bytes, Box::new(MemBacking { pages: Vec::new(), limit: None }))
    }

    /// In-memory store that refuses to grow past `max_pages`.
    pub fn in_memory_bounded(page_bytes: usize, max_pages: u64) -> Self {
        Self::with_backing(
            page_bytes,
            Box::new(MemBacking { pages: Vec::new(), limit: Some(max_pages) }),
        )
    }

    /// Creates (truncating) a pages file at `path`.
    pub fn create_file(path: &Path, page_bytes: usize) -> Result<Self> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        Ok(Self::with_backing(page_bytes, Box::new(FileBacking { file, page_bytes })))
    }

    /// Opens an existing pages file and restores the allocator state.
    pub fn open_file(
        path: &Path,
        page_bytes: usize,
        next_page: PageId,
        live: &[Extent],
    ) -> Result<Self> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let pager = Self::with_backing(page_bytes, Box::new(FileBacking { file, page_bytes }));
        {
            let mut inner = pager.inner.write();
            inner.next_page = next_page;
            for e in live {
                if e.end() > next_page {
                    return Err(Error::CorruptManifest(format!(
                        "extent {e:?} beyond end of store {next_page}"
                    )));
                }
                inner.extents.insert(e.start, (e.len, ExtentState::Live));
                for p in e.start..e.end() {
                    inner.mark_written(p);
                }
            }
        }
        pager.audit()?;
        Ok(pager)
    }

    fn with_backing(page_bytes: usize, backing: Box<dyn Backing>) -> Self {
        Pager {
            page_bytes,
            inner: RwLock::new(Inner {
                backing,
                next_page: 0,
                extents: BTreeMap::new(),
                written: Vec::new(),
            }),
        }
    }

    pub fn page_bytes(&self) -> usize {
        self.page_bytes
    }

    /// First page never handed out.
    pub fn next_page(&self) -> PageId {
        self.inner.read().next_page
    }

    pub fn allocate_extent(&self, n_pages: u64) -> Result<Extent> {
        if n_pages == 0 {
            return Err(Error::InvalidArgument("cannot allocate an empty extent".into()));
        }
        let mut inner = self.inner.write();
        let start = inner.next_page;
        inner.backing.ensure_capacity(start + n_pages)?;
        inner.next_page = start + n_pages;
        inner.extents.insert(start, (n_pages, ExtentState::Live));
        Ok(Extent { start, len: n_pages })
    }

    /// Shrinks the most recently allocated extent, returning its unused tail to the
    /// allocator. A length of zero removes the extent entirely.
    pub fn truncate_extent(&self, extent: Extent, new_len: u64) -> Result<Option<Extent>> {
        let mut inner = self.inner.write();
        inner.live(extent)?;
        if extent.end() != inner.next_page {
            return Err(Error::InvalidArgument(format!(
                "only the last extent can be truncated, {extent:?} ends before {}",
                inner.next_page
            )));
        }
        if new_len > extent.len {
            return Err(Error::InvalidArgument(format!(
                "cannot grow {extent:?} to {new_len} pages"
            )));
        }
        for p in extent.start + new_len..extent.end() {
            if inner.is_written(p) {
                return Err(Error::InvalidArgument(format!(
                    "truncation would drop written page {p}"
                )));
            }
        }
        inner.next_page = extent.start + new_len;
        if new_len == 0 {
            inner.extents.remove(&extent.start);
            Ok(None)
        } else {
            inner.extents.insert(extent.start, (new_len, ExtentState::Live));
            Ok(Some(Extent { start: extent.start, len: new_len }))
        }
    }

    pub fn write_pages(
        &self,
        extent: Extent,
        offset: u64,
        pages: &[&[u8]],
        stats: &mut IoStats,
    ) -> Result<()> {
        let mut inner = self.inner.write();
        inner.live(extent)?;
        let count = pages.len() as u64;
        if offset + count > extent.len {
            return Err(Error::OutOfRange { start: extent.start, len: extent.len, offset, count });
        }
        for (i, data) in pages.iter().enumerate() {
            if data.len() != self.page_bytes {
                return Err(Error::InvalidArgument(format!(
                    "page buffer of {} bytes, expected {}",
                    data.len(),
                    self.page_bytes
                )));
            }
            let page = extent.start + offset + i as u64;
            if inner.is_written(page) {
                return Err(Error::Overwrite(page));
            }
            inner.backing.write(page, data)?;
            inner.mark_written(page);
            stats.charge_write(page);
        }
        Ok(())
    }

    pub fn read_pages(
        &self,
        extent: Extent,
        offset: u64,
        n: u64,
        cursor: Cursor,
        stats: &mut IoStats,
    ) -> Result<Vec<Vec<u8>>> {
        let mut out = Vec::with_capacity(n as usize);
        for i in 0..n {
            let mut buf = vec![0u8; self.page_bytes];
            self.read_page_into(extent, offset + i, cursor, stats, &mut buf)?;
            out.push(buf);
        }
        Ok(out)
    }

    /// Reads one page of `extent` into `buf` (which must be `page_bytes` long).
    pub fn read_page_into(
        &self,
        extent: Extent,
        offset: u64,
        cursor: Cursor,
        stats: &mut IoStats,
        buf: &mut [u8],
    ) -> Result<()> {
        let inner = self.inner.read();
        inner.live(extent)?;
        if offset >= extent.len {
            return Err(Error::OutOfRange { start: extent.start, len: extent.len, offset, count: 1 });
        }
        let page = extent.start + offset;
        inner.backing.read(page, buf)?;
        stats.charge_read(cursor, page);
        Ok(())
    }

    pub fn free_extent(&self, extent: Extent) -> Result<()> {
        let mut inner = self.inner.write();
        match inner.extents.get(&extent.start).copied() {
            Some((len, ExtentState::Live)) if len == extent.len => {
                inner.extents.insert(extent.start, (len, ExtentState::Freed));
                inner.backing.release(extent);
                Ok(())
            }
            Some((_, ExtentState::Freed)) => Err(Error::DoubleFree(extent.start)),
            _ => Err(Error::InvalidArgument(format!("unknown extent {extent:?}"))),
        }
    }

    pub fn extent_state(&self, extent: Extent) -> Option<ExtentState> {
        self.inner
            .read()
            .extents
            .get(&extent.start)
            .filter(|(len, _)| *len == extent.len)
            .map(|(_, s)| *s)
    }

    pub fn live_extents(&self) -> Vec<Extent> {
        self.inner
            .read()
            .extents
            .iter()
            .filter(|(_, (_, s))| *s == ExtentState::Live)
            .map(|(start, (len, _))| Extent { start: *start, len: *len })
            .collect()
    }

    /// Checks that live extents are pairwise disjoint and inside the allocated area.
    pub fn audit(&self) -> Result<()> {
        let inner = self.inner.read();
        let mut prev_end = 0;
        for (start, (len, state)) in &inner.extents {
            if *state != ExtentState::Live {
                continue;
            }
            if *start < prev_end {
                return Err(Error::InvalidArgument(format!(
                    "live extent at {start} overlaps previous ending at {prev_end}"
                )));
            }
            prev_end = start + len;
        }
        if prev_end > inner.next_page {
            return Err(Error::InvalidArgument(format!(
                "live extent ends at {prev_end}, beyond allocated {}",
                inner.next_page
            )));
        }
        Ok(())
    }

    pub fn sync(&self) -> Result<()> {
        self.inner.read().backing.sync()
    }
}

impl std::fmt::Debug for Pager {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.read();
        f.debug_struct("Pager")
            .field("page_bytes", &self.page_bytes)
            .field("next_page", &inner.next_page)
            .field("extents", &inner.extents.len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PB: usize = 64;

    fn page(fill: u8) -> Vec<u8> {
        vec![fill; PB]
    }

    #[test]
    fn allocation_appends() {
        let p = Pager::in_memory(PB);
        assert_eq!(p.allocate_extent(4).unwrap(), Extent { start: 0, len: 4 });
        let p = Pager::in_memory(PB);
        assert_eq!(p.allocate_extent(2).unwrap().start, 0);
        assert_eq!(p.allocate_extent(3).unwrap().start, 2);
        assert!(matches!(p.allocate_extent(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn freed_space_is_not_reused() {
        let p = Pager::in_memory(PB);
        let a = p.allocate_extent(2).unwrap();
        p.free_extent(a).unwrap();
        assert_eq!(p.allocate_extent(2).unwrap().start, 2);
    }

    #[test]
    fn write_cursor_accounting() {
        let p = Pager::in_memory(PB);
        let mut s = IoStats::new(2);
        let _other = p.allocate_extent(5).unwrap();
        let e = p.allocate_extent(11).unwrap();
        let pages: Vec<Vec<u8>> = (0..10).map(|i| page(i as u8)).collect();
        let refs: Vec<&[u8]> = pages.iter().map(|v| v.as_slice()).collect();
        p.write_pages(e, 0, &refs, &mut s).unwrap();
        assert_eq!((s.seeks, s.seq_write_pages), (1, 10));
        p.write_pages(e, 10, &[&page(10)], &mut s).unwrap();
        assert_eq!((s.seeks, s.seq_write_pages), (1, 11));
        assert!(matches!(
            p.write_pages(e, 11, &[&page(0)], &mut s),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn interleaved_cursors_seek_once_each() {
        let p = Pager::in_memory(PB);
        let mut s = IoStats::new(2);
        let a = p.allocate_extent(4).unwrap();
        let b = p.allocate_extent(4).unwrap();
        for e in [a, b] {
            let pages: Vec<Vec<u8>> = (0..4).map(page).collect();
            let refs: Vec<&[u8]> = pages.iter().map(|v| v.as_slice()).collect();
            p.write_pages(e, 0, &refs, &mut s).unwrap();
        }
        let mut r = IoStats::new(2);
        for i in 0..4 {
            p.read_pages(a, i, 1, Cursor::A, &mut r).unwrap();
            p.read_pages(b, i, 1, Cursor::B, &mut r).unwrap();
        }
        assert_eq!((r.seeks, r.seq_read_pages), (2, 8));

        // One head: every switch is a seek.
        let mut one = IoStats::new(1);
        for i in 0..4 {
            p.read_pages(a, i, 1, Cursor::A, &mut one).unwrap();
            p.read_pages(b, i, 1, Cursor::B, &mut one).unwrap();
        }
        assert_eq!(one.seeks, 8);
    }

    #[test]
    fn freed_extents_refuse_reads_and_double_free() {
        let p = Pager::in_memory(PB);
        let mut s = IoStats::default();
        let e = p.allocate_extent(1).unwrap();
        p.write_pages(e, 0, &[&page(1)], &mut s).unwrap();
        p.free_extent(e).unwrap();
        assert!(matches!(p.read_pages(e, 0, 1, Cursor::A, &mut s), Err(Error::FreedExtent(_))));
        assert!(matches!(p.write_pages(e, 0, &[&page(1)], &mut s), Err(Error::FreedExtent(_))));
        assert!(matches!(p.free_extent(e), Err(Error::DoubleFree(_))));
    }

    #[test]
    fn pages_are_write_once() {
        let p = Pager::in_memory(PB);
        let mut s = IoStats::default();
        let e = p.allocate_extent(2).unwrap();
        p.write_pages(e, 0, &[&page(1)], &mut s).unwrap();
        assert!(matches!(p.write_pages(e, 0, &[&page(2)], &mut s), Err(Error::Overwrite(0))));
    }

    #[test]
    fn truncate_tail_extent() {
        let p = Pager::in_memory(PB);
        let mut s = IoStats::default();
        let a = p.allocate_extent(3).unwrap();
        let e = p.allocate_extent(10).unwrap();
        assert!(p.truncate_extent(a, 1).is_err());
        p.write_pages(e, 0, &[&page(1), &page(2)], &mut s).unwrap();
        assert!(p.truncate_extent(e, 1).is_err());
        let t = p.truncate_extent(e, 2).unwrap().unwrap();
        assert_eq!(t, Extent { start: 3, len: 2 });
        assert_eq!(p.allocate_extent(1).unwrap().start, 5);
        let z = p.allocate_extent(4).unwrap();
        assert_eq!(p.truncate_extent(z, 0).unwrap(), None);
        assert_eq!(p.next_page(), 6);
        p.audit().unwrap();
    }

    #[test]
    fn bounded_store_reports_full() {
        let p = Pager::in_memory_bounded(PB, 4);
        p.allocate_extent(3).unwrap();
        assert!(matches!(p.allocate_extent(2), Err(Error::StorageFull { .. })));
    }

    #[test]
    fn file_backing_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pages.dat");
        let p = Pager::create_file(&path, PB).unwrap();
        let mut s = IoStats::default();
        let e = p.allocate_extent(2).unwrap();
        p.write_pages(e, 0, &[&page(7), &page(9)], &mut s).unwrap();
        drop(p);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 2 * PB as u64);
        let q = Pager::open_file(&path, PB, 2, &[e]).unwrap();
        let got = q.read_pages(e, 0, 2, Cursor::A, &mut s).unwrap();
        assert_eq!(got, vec![page(7), page(9)]);
        assert!(matches!(q.write_pages(e, 1, &[&page(1)], &mut s), Err(Error::Overwrite(_))));
    }

    #[test]
    fn modeled_time_examples() {
        assert_eq!(modeled_time(&IoCounts::default(), &CostParams::HDD).total(), 0.0);
        let p = CostParams { t_seek: 8.5e-3, t_seq_r: 3e-5, t_seq_w: 3.2e-5 };
        let t = modeled_time(&IoCounts { seeks: 1, pages_read: 1, pages_written: 0 }, &p);
        assert!((t.total() - 8.53e-3).abs() < 1e-15);
        let t = modeled_time(&IoCounts { seeks: 2, pages_read: 0, pages_written: 10 }, &p);
        assert!((t.total() - 0.01732).abs() < 1e-15);
        assert!((t.seek_s - 0.017).abs() < 1e-15 && (t.write_s - 3.2e-4).abs() < 1e-15);
    }
}
