use nbtree::bloom::BloomFilter;
use nbtree::dtree::{bulk_build, lookup, merge_streams, scan, Io, Layout};
use nbtree::{Config, Cursor, DeltaRecord, IoStats, Key, KeyRange, Op, OracleMap, Pager, RecordCodec, Value};
use proptest::prelude::*;

fn layout(leaf: usize, fanout: usize) -> Layout {
    Layout::from_config(&Config {
        page_bytes: 512,
        dtree_fanout: fanout,
        value_bytes: 8,
        leaf_capacity: Some(leaf),
        ..Config::default()
    })
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        any::<u64>().prop_map(|x| Op::Put(Value::from_u64(x, 8))),
        Just(Op::Delete),
        any::<u64>().prop_map(|x| Op::Update(Value::from_u64(x, 8))),
    ]
}

fn sorted_records(max: usize) -> impl Strategy<Value = Vec<DeltaRecord>> {
    prop::collection::btree_map(any::<u64>(), (op(), any::<u64>()), 0..max).prop_map(|m| {
        m.into_iter()
            .map(|(k, (op, seq))| DeltaRecord { key: Key::from_u64(k, 8), op, seq })
            .collect()
    })
}

proptest! {
    #[test]
    fn codec_round_trip(k in any::<u64>(), op in op(), seq in any::<u64>()) {
        let c = RecordCodec::new(8, 8);
        let r = DeltaRecord { key: Key::from_u64(k, 8), op, seq };
        let bytes = c.encode(&r).unwrap();
        prop_assert_eq!(bytes.len(), c.encoded_len());
        prop_assert_eq!(c.decode(&bytes).unwrap(), r);
    }

    #[test]
    fn key_encoding_preserves_order(a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(Key::from_u64(a, 8).cmp(&Key::from_u64(b, 8)), a.cmp(&b));
        prop_assert_eq!(Key::from_u64(a, 8).to_u64(), a);
    }

    #[test]
    fn pager_round_trip(pages in prop::collection::vec(any::<u8>(), 1..20)) {
        let p = Pager::in_memory(64);
        let mut st = IoStats::new(2);
        let e = p.allocate_extent(pages.len() as u64).unwrap();
        let data: Vec<Vec<u8>> = pages.iter().map(|&b| vec![b; 64]).collect();
        let refs: Vec<&[u8]> = data.iter().map(|d| d.as_slice()).collect();
        p.write_pages(e, 0, &refs, &mut st).unwrap();
        let back = p.read_pages(e, 0, pages.len() as u64, Cursor::A, &mut st).unwrap();
        prop_assert_eq!(back, data);
        prop_assert_eq!(st.counts().pages_written, pages.len() as u64);
        prop_assert_eq!(st.counts().seeks, 2);
    }

    #[test]
    fn bulk_build_then_scan_is_identity(
        recs in sorted_records(400),
        leaf in 1usize..6,
        fanout in 4usize..9,
    ) {
        let l = layout(leaf, fanout);
        let p = Pager::in_memory(l.page_bytes);
        let mut st = IoStats::new(2);
        let mut io = Io::new(&p, &l, &mut st);
        let built = bulk_build(recs.clone(), &mut io).unwrap();
        prop_assert_eq!(built.tree.record_count, recs.len() as u64);
        let back = scan(&built.tree, None, Cursor::B).collect_all(&mut io).unwrap();
        prop_assert_eq!(&back, &recs);
        for r in &recs {
            let found = lookup(&built.tree, &r.key, Cursor::A, &mut io).unwrap();
            prop_assert_eq!(found.as_ref(), Some(r));
            prop_assert!(built.bloom.may_contain(&r.key));
        }
        if recs.len() >= 2 {
            let lo = recs[recs.len() / 3].key.clone();
            let hi = recs[2 * recs.len() / 3].key.clone();
            let range = KeyRange::new(lo.clone(), hi.clone()).unwrap();
            let part = scan(&built.tree, Some(&range), Cursor::A).collect_all(&mut io).unwrap();
            let expect: Vec<_> = recs.iter().filter(|r| r.key >= lo && r.key <= hi).cloned().collect();
            prop_assert_eq!(part, expect);
        }
    }

    #[test]
    fn bloom_has_no_false_negatives(keys in prop::collection::vec(any::<u64>(), 0..500), k in 1usize..12, h in 1u32..6) {
        let ks: Vec<Key> = keys.iter().map(|&x| Key::from_u64(x, 8)).collect();
        let f = BloomFilter::build(&ks, k, h);
        for key in &ks {
            prop_assert!(f.may_contain(key));
        }
        let g = BloomFilter::from_bytes(&f.to_bytes()).unwrap();
        prop_assert_eq!(g, f);
    }

    #[test]
    fn merge_of_two_runs_matches_oracle(older in sorted_records(200), newer in sorted_records(200)) {
        let mut seq = 0;
        let stamp = |v: Vec<DeltaRecord>, seq: &mut u64| -> Vec<DeltaRecord> {
            v.into_iter().map(|mut r| { *seq += 1; r.seq = *seq; r }).collect()
        };
        let older = stamp(older, &mut seq);
        let newer = stamp(newer, &mut seq);
        let mut o = OracleMap::new();
        for r in older.iter().chain(&newer) {
            o.apply(r);
        }
        let merged: Vec<DeltaRecord> = merge_streams(newer, older).collect::<Result<_, _>>().unwrap();
        let mut m = OracleMap::new();
        for r in &merged {
            m.apply(r);
        }
        prop_assert_eq!(m, o);
        prop_assert!(merged.windows(2).all(|w| w[0].key < w[1].key));
    }
}
