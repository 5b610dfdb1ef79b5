mod common;

use common::pending_manifest;
use emoforge_core::dataset::{Manifest, ReviewStatus, REVIEWS_FILE};
use emoforge_core::review::{apply_decision, read_log, replay, Decision, ReviewEntry, ReviewStore};
use emoforge_core::Error;
use proptest::prelude::*;

#[test]
fn pending_moves_once_to_a_terminal_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = pending_manifest(dir.path(), 3);
    let id = m.records[0].id.clone();
    apply_decision(&mut m, &id, Decision::Accept).unwrap();
    assert_eq!(m.records[0].review_status, ReviewStatus::Accepted);
    for d in [Decision::Accept, Decision::Reject] {
        match apply_decision(&mut m, &id, d) {
            Err(Error::Conflict { status, .. }) => assert_eq!(status, "accepted"),
            other => panic!("expected conflict, got {other:?}"),
        }
    }
    let id = m.records[1].id.clone();
    apply_decision(&mut m, &id, Decision::Reject).unwrap();
    assert!(matches!(apply_decision(&mut m, &id, Decision::Accept), Err(Error::Conflict { .. })));
    assert!(matches!(apply_decision(&mut m, "nope", Decision::Accept), Err(Error::NotFound(_))));
}

#[test]
fn accepting_a_gate_failure_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = pending_manifest(dir.path(), 1);
    m.records[0].scores.clip_t = 0.1;
    let before = m.clone();
    assert!(matches!(apply_decision(&mut m, &before.records[0].id, Decision::Accept), Err(Error::Validation(_))));
    assert_eq!(m, before);
    apply_decision(&mut m, &before.records[0].id, Decision::Reject).unwrap();
}

#[test]
fn queue_is_fifo_and_limited() {
    let dir = tempfile::tempdir().unwrap();
    let m = pending_manifest(dir.path(), 10);
    let store = ReviewStore::open(dir.path()).unwrap();
    let q = store.queue(3);
    assert_eq!(q.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), [&m.records[0].id, &m.records[1].id, &m.records[2].id]);
    store.decide(&m.records[1].id, Decision::Reject, "r").unwrap();
    let q = store.queue(3);
    assert_eq!(q.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), [&m.records[0].id, &m.records[2].id, &m.records[3].id]);
    assert_eq!(store.pending_count(), 9);
    assert_eq!(store.queue(100).len(), 9);
    assert_eq!(q[0].source_image, "images/00.png");
    assert!(q[0].gate.passed);
}

#[test]
fn store_rejects_second_decision_without_logging_it() {
    let dir = tempfile::tempdir().unwrap();
    let m = pending_manifest(dir.path(), 2);
    let store = ReviewStore::open(dir.path()).unwrap();
    let id = &m.records[0].id;
    assert_eq!(store.decide(id, Decision::Accept, "alice").unwrap().status, ReviewStatus::Accepted);
    assert!(matches!(store.decide(id, Decision::Reject, "bob"), Err(Error::Conflict { .. })));
    assert!(matches!(store.decide("missing", Decision::Reject, "bob"), Err(Error::NotFound(_))));
    let log = read_log(&dir.path().join(REVIEWS_FILE)).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].reviewer, "alice");
}

#[test]
fn reopened_store_replays_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let m = pending_manifest(dir.path(), 6);
    let live = {
        let store = ReviewStore::open(dir.path()).unwrap();
        for (i, r) in m.records.iter().enumerate().filter(|(i, _)| i % 3 != 2) {
            let d = if i % 2 == 0 { Decision::Accept } else { Decision::Reject };
            store.decide(&r.id, d, "r").unwrap();
        }
        store.snapshot()
    };
    let reopened = ReviewStore::open(dir.path()).unwrap().snapshot();
    assert_eq!(reopened, live);
    // the manifest on disk is never rewritten by review
    assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    assert_eq!(reopened.pair_count(), 2);
}

#[test]
fn illegal_log_entries_are_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let m = pending_manifest(dir.path(), 2);
    let e = |id: &str, decision| ReviewEntry { id: id.into(), decision, reviewer: "r".into(), timestamp_ms: 0 };
    let log = dir.path().join(REVIEWS_FILE);
    let twice = [e(&m.records[0].id, Decision::Accept), e(&m.records[0].id, Decision::Reject)];
    assert!(matches!(replay(m.clone(), &twice, &log), Err(Error::Corrupt { .. })));
    assert!(matches!(replay(m.clone(), &[e("ghost", Decision::Accept)], &log), Err(Error::Corrupt { .. })));

    std::fs::write(&log, "not json\n").unwrap();
    assert!(matches!(ReviewStore::open(dir.path()), Err(Error::Corrupt { .. })));
}

#[test]
fn image_names_are_restricted_to_hashes() {
    let dir = tempfile::tempdir().unwrap();
    pending_manifest(dir.path(), 1);
    let store = ReviewStore::open(dir.path()).unwrap();
    assert!(store.image_path("abc123.png").is_some());
    for bad in ["../pairs.mjson", "abc.jpg", ".png", "a/b.png", "xyz.png"] {
        assert!(store.image_path(bad).is_none(), "{bad}");
    }
}

proptest! {
    #[test]
    fn replay_equals_live_state(ops in prop::collection::vec((0usize..8, any::<bool>()), 0..30)) {
        let dir = tempfile::tempdir().unwrap();
        let m = pending_manifest(dir.path(), 8);
        let store = ReviewStore::open(dir.path()).unwrap();
        let mut model = m.clone();
        for (i, accept) in ops {
            let d = if accept { Decision::Accept } else { Decision::Reject };
            let live = store.decide(&m.records[i].id, d, "p").is_ok();
            let modelled = apply_decision(&mut model, &m.records[i].id, d).is_ok();
            prop_assert_eq!(live, modelled);
        }
        prop_assert_eq!(&store.snapshot(), &model);
        let entries = read_log(&dir.path().join(REVIEWS_FILE)).unwrap();
        prop_assert_eq!(replay(m, &entries, dir.path()).unwrap(), model);
    }
}
