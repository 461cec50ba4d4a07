mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use common::{personal, Harness};
use parking_lot::Mutex;
use pqballot::biometric::{normalize, CaptureSample, EmbeddingProvider, FaceEmbedding, SyntheticProvider};
use pqballot::ledger::Clock;
use pqballot::protocol::{ElectionPhase, NodeOptions, ProtocolError, ProtocolEvent, ProtocolObserver, SnapshotPolicy, Stage};
use pqballot::registry::Registry;

/// Tally by reading the kind byte and candidate id straight out of the
/// canonical block bytes.
fn raw_recount(h: &Harness) -> BTreeMap<u32, u64> {
    let mut counts = BTreeMap::new();
    for bytes in h.blocks.records() {
        if bytes[42] == 2 {
            let id = u32::from_le_bytes(bytes[67..71].try_into().unwrap());
            *counts.entry(id).or_insert(0) += 1;
        }
    }
    counts
}

#[test]
fn enrollment_outcomes() {
    let h = Harness::new();
    let r = h.enroll(1);
    assert!(r.block_index >= 1);
    assert_eq!(h.node.voter(&r.address).unwrap().block_index, r.block_index);

    let len = h.node.ledger().len();
    let spoof = CaptureSample::new(h.sample(2, 0).embedding, 0.95, "synthetic").unwrap();
    assert_eq!(h.node.enroll(personal(2), spoof), Err(ProtocolError::SpoofDetected));
    assert_eq!(h.node.enroll(personal(1), h.enrollment(3)), Err(ProtocolError::AlreadyRegistered));
    assert_eq!(h.node.ledger().len(), len);

    let mut bad = personal(4);
    bad.phone = String::new();
    assert!(matches!(h.node.enroll(bad, h.enrollment(4)), Err(ProtocolError::InvalidInput(_))));
}

#[test]
fn authentication_outcomes() {
    let h = Harness::new();
    let a = h.enroll(1).address;
    let s = h.node.authenticate(&a, h.sample(1, 5)).unwrap();
    assert!(s.similarity >= 0.4);
    assert_eq!(s.expires_at_ms, h.clock.now_ms() + 120_000);

    // a different synthetic identity
    assert_eq!(h.node.authenticate(&a, h.sample(99, 0)), Err(ProtocolError::NoMatch));
    assert_eq!(h.node.authenticate(&pqballot::ledger::Address([3; 20]), h.sample(1, 1)), Err(ProtocolError::UnknownVoter));

    let mut values = h.node.voter(&a).unwrap().template.values().to_vec();
    values[0] = -values[0];
    let corrupted = FaceEmbedding::from_normalized(values, 1.0).unwrap();
    assert!(h.node.overwrite_stored_template(&a, corrupted));
    assert_eq!(h.node.authenticate(&a, h.sample(1, 2)), Err(ProtocolError::SignatureInvalid));
}

#[test]
fn vote_outcomes() {
    let h = Harness::new();
    let a = h.enroll(1).address;
    let s = h.node.authenticate(&a, h.sample(1, 1)).unwrap();
    assert_eq!(h.node.cast_vote(&s.session_id, 9), Err(ProtocolError::UnknownCandidate(9)));
    let receipt = h.node.cast_vote(&s.session_id, 2).unwrap();
    assert_eq!(h.node.results()[&2], 1);
    assert_eq!(h.node.cast_vote(&s.session_id, 2), Err(ProtocolError::SessionInvalid));

    let s2 = h.node.authenticate(&a, h.sample(1, 2)).unwrap();
    assert_eq!(h.node.cast_vote(&s2.session_id, 1), Err(ProtocolError::AlreadyVoted));
    // consumed even though the vote was refused
    assert_eq!(h.node.cast_vote(&s2.session_id, 1), Err(ProtocolError::SessionInvalid));

    let Some(pqballot::ledger::Payload::Vote(v)) = h.node.ledger().get_block(receipt.block_index).ok().map(|b| b.block.payload.clone())
    else {
        panic!("receipt does not point at a vote block")
    };
    assert_eq!(v.tx_id, receipt.tx_id);
    let expected = pqballot::protocol::transaction_id(&a, 2, receipt.timestamp_ms, &s.session_id);
    assert_eq!(receipt.tx_id, expected);
}

#[test]
fn session_expiry() {
    let h = Harness::new();
    let a = h.enroll(1).address;
    let s = h.node.authenticate(&a, h.sample(1, 1)).unwrap();
    h.clock.advance(Duration::from_secs(120).as_millis() as u64);
    assert_eq!(h.node.cast_vote(&s.session_id, 1), Err(ProtocolError::SessionExpired));
    assert_eq!(h.node.cast_vote(&s.session_id, 1), Err(ProtocolError::SessionInvalid));
}

#[test]
fn receipt_audit() {
    let h = Harness::new();
    let a = h.enroll(1).address;
    let s = h.node.authenticate(&a, h.sample(1, 1)).unwrap();
    let receipt = h.node.cast_vote(&s.session_id, 3).unwrap();
    assert!(h.node.audit_receipt(&receipt));
    let mut altered = receipt.clone();
    altered.tx_id[0] ^= 1;
    assert!(!h.node.audit_receipt(&altered));
    let mut moved = receipt.clone();
    moved.block_index = 1;
    assert!(!h.node.audit_receipt(&moved));
    moved.block_index = 999;
    assert!(!h.node.audit_receipt(&moved));
}

#[test]
fn results_match_raw_recount() {
    let h = Harness::new();
    for (subject, candidate) in [(1, 1), (2, 2), (3, 1), (4, 3), (5, 1)] {
        let a = h.enroll(subject).address;
        let s = h.node.authenticate(&a, h.sample(subject, 1)).unwrap();
        h.node.cast_vote(&s.session_id, candidate).unwrap();
    }
    let results = h.node.results();
    assert_eq!(results.values().sum::<u64>(), 5);
    assert_eq!(results.into_iter().filter(|(_, n)| *n > 0).collect::<BTreeMap<_, _>>(), raw_recount(&h));
    assert_eq!(h.node.results()[&1], 3);
}

#[derive(Default)]
struct Recorder(Mutex<Vec<String>>);

impl ProtocolObserver for Recorder {
    fn on_stage(&self, stage: Stage, _: Duration) {
        self.0.lock().push(format!("{stage:?}"));
    }
    fn on_event(&self, event: ProtocolEvent) {
        self.0.lock().push(format!("{event:?}"));
    }
}

#[test]
fn spoof_never_reaches_signature_or_match() {
    let h = Harness::new();
    let a = h.enroll(1).address;
    let rec = Arc::new(Recorder::default());
    let node = h.reopen().with_observer(rec.clone());
    for score in [0.5, 0.7, 0.95, 1.0] {
        let spoof = CaptureSample::new(h.sample(1, 3).embedding, score, "synthetic").unwrap();
        assert_eq!(node.authenticate(&a, spoof), Err(ProtocolError::SpoofDetected));
    }
    let trace = rec.0.lock().clone();
    assert_eq!(trace.len(), 8);
    assert!(trace.chunks(2).all(|c| c == ["Liveness", "SpoofRejected"]));

    rec.0.lock().clear();
    node.authenticate(&a, h.sample(1, 4)).unwrap();
    assert_eq!(*rec.0.lock(), ["Liveness", "Verify", "Match"]);
    rec.0.lock().clear();
    let _ = node.authenticate(&a, h.sample(77, 0));
    assert_eq!(*rec.0.lock(), ["Liveness", "Verify", "Match", "AuthFailed"]);
}

#[test]
fn lifecycle() {
    let h = Harness::new();
    assert_eq!(h.node.phase(), ElectionPhase::Open);
    assert_eq!(h.node.add_candidate(9, "Late"), Err(ProtocolError::ElectionAlreadyOpen));
    let a = h.enroll(1).address;
    let s = h.node.authenticate(&a, h.sample(1, 1)).unwrap();
    h.node.close_election();
    assert_eq!(h.node.cast_vote(&s.session_id, 1), Err(ProtocolError::ElectionClosed));
    assert_eq!(h.node.enroll(personal(2), h.enrollment(2)), Err(ProtocolError::ElectionClosed));
    // reopening the same data resumes the open election
    assert_eq!(h.reopen().phase(), ElectionPhase::Open);
    assert_eq!(h.reopen().candidates().len(), 3);
}

#[test]
fn injected_failures_keep_replay_consistent() {
    let h = Harness::new();
    h.enroll(1);
    h.templates.fail_after(0);
    assert!(matches!(h.node.enroll(personal(2), h.enrollment(2)), Err(ProtocolError::PersistenceFailure(_))));
    h.templates.heal();

    // template lands, block does not: an orphan template
    h.blocks.fail_after(0);
    assert!(matches!(h.node.enroll(personal(3), h.enrollment(3)), Err(ProtocolError::PersistenceFailure(_))));
    h.blocks.heal();

    let a = h.enroll(4).address;
    let s = h.node.authenticate(&a, h.sample(4, 1)).unwrap();
    h.blocks.fail_after(0);
    assert!(matches!(h.node.cast_vote(&s.session_id, 1), Err(ProtocolError::PersistenceFailure(_))));
    h.blocks.heal();
    assert!(!h.node.voter(&a).unwrap().has_voted);

    assert_eq!(h.templates.records().len(), 3);
    assert_eq!(h.reopen().registry_snapshot(), h.node.registry_snapshot());
    // the failed citizen can enroll afterwards
    h.enroll(3);
    assert_eq!(h.reopen().registry_snapshot(), h.node.registry_snapshot());
}

#[test]
fn snapshot_restores_and_stale_snapshot_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.snap");
    let options = NodeOptions { snapshot: Some(SnapshotPolicy { path: path.clone(), every_blocks: 3 }), ..Default::default() };
    let h = Harness::with_options(options);
    for i in 1..=4 {
        h.enroll(i);
    }
    assert!(path.exists());
    let live = h.node.registry_snapshot();
    assert_eq!(h.reopen().registry_snapshot(), live);

    // a snapshot from another chain is rejected and replay still matches
    let mut bogus = pqballot::registry::Snapshot::load(&path, pqballot::sigscheme::Profile::F512).unwrap().unwrap();
    bogus.tip_hash = [9; 32];
    bogus.registry = Registry::new();
    bogus.save(&path).unwrap();
    assert_eq!(h.reopen().registry_snapshot(), live);
}

#[test]
fn high_spoof_provider_is_rejected() {
    let h = Harness::new();
    let provider = SyntheticProvider::new(7, 0.05).with_spoof_score(0.9);
    let sample = provider.capture(5, 0).unwrap();
    assert_eq!(h.node.enroll(personal(5), sample), Err(ProtocolError::SpoofDetected));
    let raw = normalize(&provider.raw_capture(5, 1)).unwrap();
    assert_eq!(raw.values().len(), 512);
}
