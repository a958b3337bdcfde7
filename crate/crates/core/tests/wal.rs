//! Crash-point sweep: the log of five transactions is cut at every byte, and
//! recovery must produce exactly the effects of the commits that survived.

mod support;

use eductive::recovery::{decode_log, replay, RecoverableService, WriteAheadLogger, WAL_MAGIC};
use support::ledger::*;

#[test]
fn live_state_matches_full_replay() {
    let (bytes, live) = full_log();
    assert_eq!(live.0, ["alpha", "beta", "delta", "epsilon"]);
    let (replayed, report) = replay::<Ledger>(&bytes, None).unwrap();
    assert_eq!(replayed, live);
    assert_eq!(report.applied.len(), 4);
    assert_eq!(report.aborted.len(), 1);
    assert!(report.discarded.is_empty());
}

#[test]
fn every_crash_point_recovers_committed_prefix() {
    let (bytes, _) = full_log();
    let total = decode_log(&bytes).unwrap().entries.len();
    let mut points = 0;
    for cut in WAL_MAGIC.len()..=bytes.len() {
        let prefix = &bytes[..cut];
        let survived = decode_log(prefix).unwrap().entries.len();
        let (state, report) = replay::<Ledger>(prefix, None).unwrap();
        assert_eq!(state, expected(&bytes, survived), "cut at byte {cut}");
        assert_eq!(report.corrupt_at.is_some(), cut != bytes.len() && encode_len(&bytes, survived) != cut);
        points += 1;
    }
    assert!(total >= 20);
    assert_eq!(points, bytes.len() - WAL_MAGIC.len() + 1);
}

#[test]
fn replay_is_idempotent() {
    let (bytes, _) = full_log();
    for cut in WAL_MAGIC.len()..=bytes.len() {
        let prefix = &bytes[..cut];
        let (once, _) = replay::<Ledger>(prefix, None).unwrap();
        let resumed = WriteAheadLogger::resume_in_memory(prefix).unwrap().bytes();
        let (twice, _) = replay::<Ledger>(&resumed, None).unwrap();
        let (again, _) = replay::<Ledger>(&WriteAheadLogger::resume_in_memory(&resumed).unwrap().bytes(), None).unwrap();
        assert_eq!(once, twice, "cut at byte {cut}");
        assert_eq!(twice, again, "cut at byte {cut}");
    }
}

#[test]
fn recovered_service_continues() {
    let (bytes, _) = full_log();
    for cut in (WAL_MAGIC.len()..=bytes.len()).step_by(7) {
        let prefix = &bytes[..cut];
        let (state, _) = replay::<Ledger>(prefix, None).unwrap();
        let mut svc = RecoverableService::new(WriteAheadLogger::resume_in_memory(prefix).unwrap(), state.clone());
        svc.execute("append", b"zeta".to_vec()).unwrap();
        let (replayed, _) = replay::<Ledger>(&svc.logger().bytes(), None).unwrap();
        let mut want = state;
        want.0.push("zeta".into());
        assert_eq!(replayed, want, "cut at byte {cut}");
    }
}

#[test]
fn checkpoint_base_replays_the_tail_only() {
    let mut svc = RecoverableService::new(WriteAheadLogger::in_memory(), Ledger::default());
    svc.execute("append", b"one".to_vec()).unwrap();
    svc.execute("append", b"two".to_vec()).unwrap();
    let base = svc.state().clone();
    svc.logger_mut().checkpoint().unwrap();
    svc.execute("append", b"three".to_vec()).unwrap();
    let bytes = svc.logger().bytes();
    let (from_base, report) = replay(&bytes, Some(base)).unwrap();
    let (full, _) = replay::<Ledger>(&bytes, None).unwrap();
    assert_eq!(from_base, full);
    assert_eq!(report.applied.len(), 1);
}

#[test]
fn file_log_truncated_at_every_entry_boundary() {
    let (bytes, _) = full_log();
    let entries = decode_log(&bytes).unwrap().entries.len();
    let dir = tempfile::tempdir().unwrap();
    for n in 0..=entries {
        let cut = encode_len(&bytes, n);
        for torn in [0usize, 3] {
            let path = dir.path().join(format!("wal-{n}-{torn}"));
            let end = (cut + torn).min(bytes.len());
            std::fs::write(&path, &bytes[..end]).unwrap();
            let logger = WriteAheadLogger::open(&path, true).unwrap();
            assert_eq!(logger.entries().len(), decode_log(&bytes[..end]).unwrap().entries.len());
            let on_disk = std::fs::read(&path).unwrap();
            let (state, _) = replay::<Ledger>(&on_disk, None).unwrap();
            assert_eq!(state, expected(&bytes, logger.entries().len()), "entries {n} torn {torn}");
        }
    }
}
