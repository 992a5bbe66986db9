use focusloom_core::store::{Corruption, KeySource, RecordKind, Store, RECORDS_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Frame end offsets read straight from the length prefixes.
fn frame_ends(buf: &[u8]) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut off = 0;
    while off + 4 <= buf.len() {
        let len = u32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as usize;
        off += 4 + len;
        ends.push(off);
    }
    assert_eq!(off, buf.len());
    ends
}

#[test]
fn random_truncations_leave_a_clean_prefix() {
    let src = tempfile::tempdir().unwrap();
    let mut store = Store::open(src.path(), KeySource::LoadOrGenerate).unwrap();
    for i in 0..60 {
        let body = json!({ "i": i, "pad": "x".repeat(i * 7 % 90) });
        store.append(1_000 + i as i64, RecordKind::Event, body).unwrap();
    }
    drop(store);
    let full = std::fs::read(src.path().join(RECORDS_FILE)).unwrap();
    let key = std::fs::read(src.path().join("key")).unwrap();
    let ends = frame_ends(&full);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for round in 0..100 {
        let cut = rng.random_range(0..=full.len());
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(RECORDS_FILE), &full[..cut]).unwrap();
        std::fs::write(dir.path().join("key"), &key).unwrap();

        let whole = ends.iter().filter(|&&e| e <= cut).count();
        let boundary = ends.iter().rev().find(|&&e| e <= cut).copied().unwrap_or(0);

        let store = Store::open(dir.path(), KeySource::Existing).unwrap();
        match store.recovered() {
            None => assert_eq!(boundary, cut, "round {round}"),
            Some(Corruption::Tail { offset, bytes }) => {
                assert_eq!(offset as usize, boundary, "round {round}");
                assert_eq!((offset + bytes) as usize, cut, "round {round}");
            }
            Some(other) => panic!("round {round}: unexpected {other:?}"),
        }
        let scan = store.scan_all().unwrap();
        assert!(scan.corrupt.is_empty(), "round {round}: {:?}", scan.corrupt);
        let seqs: Vec<u64> = scan.records.iter().map(|r| r.seq).collect();
        assert_eq!(seqs, (1..=whole as u64).collect::<Vec<_>>(), "round {round}");
        assert_eq!(store.next_seq(), whole as u64 + 1);
    }
}

#[test]
fn appends_after_recovery_stay_readable() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = Store::open(dir.path(), KeySource::LoadOrGenerate).unwrap();
    for i in 0..5 {
        store.append(i, RecordKind::Event, json!({ "i": i })).unwrap();
    }
    drop(store);
    let path = dir.path().join(RECORDS_FILE);
    let buf = std::fs::read(&path).unwrap();
    std::fs::write(&path, &buf[..buf.len() - 7]).unwrap();

    let mut store = Store::open(dir.path(), KeySource::Existing).unwrap();
    assert!(matches!(store.recovered(), Some(Corruption::Tail { .. })));
    store.append(10, RecordKind::Event, json!({ "after": true })).unwrap();
    let scan = store.scan_all().unwrap();
    assert!(scan.corrupt.is_empty());
    assert_eq!(scan.records.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    assert_eq!(scan.records.last().unwrap().body, json!({ "after": true }));
}
