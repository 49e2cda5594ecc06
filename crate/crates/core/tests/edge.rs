mod common;

use std::collections::HashSet;

use common::{day0, event, Rig};
use multichain_forensics::chainsim::{Attack, TxStatus};
use multichain_forensics::datacenter::DataCenter;
use multichain_forensics::edge::geo::Point;
use multichain_forensics::edge::{
    filter_event, read_events_jsonl, write_events_jsonl, Admission, EdgeDevice, EdgeError, EventKind, SignificancePolicy,
    SubmissionStatus,
};
use multichain_forensics::time::DEFAULT_ORIGIN;

fn unit_square(kinds: &[EventKind]) -> SignificancePolicy {
    let fence = vec![Point::new(0.0, 0.0), Point::new(0.0, 1.0), Point::new(1.0, 1.0), Point::new(1.0, 0.0)];
    SignificancePolicy::new(fence, kinds.iter().copied(), 1000).unwrap()
}

#[test]
fn geofence_filter_matches_grid_oracle() {
    let policy = unit_square(&[EventKind::Accident]);
    let mut e = event(0, 0, DEFAULT_ORIGIN);
    let mut checked = 0;
    for i in -10..=30 {
        for j in -10..=30 {
            let (lat, lon) = (i as f64 / 20.0, j as f64 / 20.0);
            // closed square: the boundary counts as inside
            let inside = (0..=20).contains(&i) && (0..=20).contains(&j);
            e.location = Point::new(lat, lon);
            e.kind = EventKind::Heartbeat;
            assert_eq!(filter_event(&e, &policy), !inside, "({lat}, {lon})");
            e.kind = EventKind::Accident;
            assert!(filter_event(&e, &policy), "kind rule ignores location at ({lat}, {lon})");
            checked += 1;
        }
    }
    assert_eq!(checked, 41 * 41);
}

#[test]
fn concave_fence_excludes_the_notch() {
    // L-shape: unit square minus its upper-right quarter
    let fence = vec![
        Point::new(0.0, 0.0),
        Point::new(0.0, 1.0),
        Point::new(0.5, 1.0),
        Point::new(0.5, 0.5),
        Point::new(1.0, 0.5),
        Point::new(1.0, 0.0),
    ];
    let policy = SignificancePolicy::new(fence, [EventKind::Accident], 10).unwrap();
    let mut e = event(0, 0, DEFAULT_ORIGIN);
    e.kind = EventKind::Other;
    for (lat, lon, inside) in [(0.25, 0.25, true), (0.25, 0.75, true), (0.75, 0.25, true), (0.75, 0.75, false), (0.5, 0.75, true)] {
        e.location = Point::new(lat, lon);
        assert_eq!(filter_event(&e, &policy), !inside, "({lat}, {lon})");
    }
}

#[test]
fn same_event_twice_has_same_digest_and_distinct_tx_ids() {
    let rig = Rig::new(1);
    let e = event(0, 0, DEFAULT_ORIGIN.plus(100));
    rig.at(e.timestamp);
    let first = rig.devices[0].process_event(&e, &rig.dc).unwrap();
    rig.at(e.timestamp.plus(10));
    let other_store = DataCenter::in_memory();
    other_store.register_device(rig.devices[0].registration()).unwrap();
    let second = rig.devices[0].process_event(&e, &other_store).unwrap();
    assert_eq!(first.payload_digest, second.payload_digest);
    assert_eq!(first.payload_digest, e.payload_digest());
    for chain in ["eos", "stellar"] {
        let (a, b) = (first.entry(chain).unwrap(), second.entry(chain).unwrap());
        assert!(a.tx_id.is_some() && b.tx_id.is_some());
        assert_ne!(a.tx_id, b.tx_id, "{chain}");
    }
}

#[test]
fn offline_chain_is_recorded_as_failed_and_retried_later() {
    let rig = Rig::new(1);
    rig.xlm.set_online(false);
    let e = event(0, 0, DEFAULT_ORIGIN.plus(100));
    rig.at(e.timestamp);
    let rec = rig.devices[0].process_event(&e, &rig.dc).unwrap();
    let eos = rec.entry("eos").unwrap();
    let xlm = rec.entry("stellar").unwrap();
    assert_eq!(eos.status, SubmissionStatus::Pending);
    assert_eq!(xlm.status, SubmissionStatus::Failed);
    assert!(xlm.tx_id.is_none() && xlm.error.is_some());
    // the event is stored regardless
    assert!(rig.dc.contains(&e.event_id));

    rig.xlm.set_online(true);
    rig.at(e.timestamp.plus(300));
    let mut records = vec![rec.clone()];
    let fresh = rig.devices[0].retry_unconfirmed(&mut records, rig.eos.now(), 120);
    assert_eq!(fresh.len(), 1, "only the failed chain is resubmitted");
    let xlm = records[0].entry("stellar").unwrap();
    assert_eq!(xlm.attempt_count, 2);
    assert_eq!(xlm.fee, rec.entry("stellar").unwrap().fee.scaled(2));
    assert_eq!(xlm.tx_id, Some(fresh[0]));
    assert_eq!(records[0].entry("eos").unwrap().status, SubmissionStatus::Confirmed);
    assert_eq!(records[0].entry("eos").unwrap().attempt_count, 1);
}

#[test]
fn retry_respects_timeout_and_keeps_history() {
    let rig = Rig::new(1);
    let e = event(0, 0, DEFAULT_ORIGIN.plus(100));
    rig.at(e.timestamp);
    let rec = rig.devices[0].process_event(&e, &rig.dc).unwrap();
    let dropped = rec.entry("eos").unwrap().tx_id.unwrap();
    rig.eos.inject_attack(Attack::DropTx { tx_id: dropped }).unwrap();

    let mut records = vec![rec.clone()];
    rig.at(e.timestamp.plus(30));
    assert!(rig.devices[0].retry_unconfirmed(&mut records, rig.eos.now(), 120).is_empty());
    assert_eq!(records[0].entry("eos").unwrap().status, SubmissionStatus::Evicted);

    rig.at(e.timestamp.plus(200));
    let fresh = rig.devices[0].retry_unconfirmed(&mut records, rig.eos.now(), 120);
    assert_eq!(fresh.len(), 1);
    let eos = records[0].entry("eos").unwrap();
    assert_eq!(eos.history, vec![dropped]);
    assert_eq!(eos.attempt_count, 2);
    rig.at(e.timestamp.plus(400));
    assert_eq!(rig.eos.query_tx(&fresh[0]).unwrap().status, TxStatus::Confirmed);
    // once confirmed, further retries are no-ops
    assert!(rig.devices[0].retry_unconfirmed(&mut records, rig.eos.now().plus(10_000), 120).is_empty());
    assert_eq!(records[0].entry("eos").unwrap().status, SubmissionStatus::Confirmed);
}

#[test]
fn daily_cap_limits_location_only_events() {
    let rig = Rig::new(0);
    let policy = SignificancePolicy::new(SignificancePolicy::default_zone().geofence.vertices().to_vec(), [EventKind::Accident], 2)
        .unwrap();
    let mut dev = EdgeDevice::provision("boat-001", "edge-001", policy, &rig.first_level(), 1).unwrap();
    let mut outside = event(0, 0, DEFAULT_ORIGIN.plus(10));
    outside.kind = EventKind::Heartbeat;
    outside.location = Point::new(26.5, -80.0);
    let admissions: Vec<Admission> = (0..4).map(|_| dev.admit(&outside)).collect();
    assert_eq!(admissions, [Admission::Submit, Admission::Submit, Admission::OverDailyCap, Admission::OverDailyCap]);
    assert_eq!(dev.admit(&event(0, 1, DEFAULT_ORIGIN.plus(20))), Admission::Submit);
    let mut inside = event(0, 2, DEFAULT_ORIGIN.plus(30));
    inside.kind = EventKind::Heartbeat;
    assert_eq!(dev.admit(&inside), Admission::Insignificant);
    // the cap resets the next day
    outside.timestamp = day0().next().start().plus(5);
    assert_eq!(dev.admit(&outside), Admission::Submit);
}

#[test]
fn events_from_another_device_are_refused() {
    let rig = Rig::new(2);
    let e = event(1, 0, DEFAULT_ORIGIN.plus(10));
    rig.at(e.timestamp);
    assert!(matches!(rig.devices[0].process_event(&e, &rig.dc), Err(EdgeError::InvalidEvent(_))));
    assert!(rig.dc.is_empty());
}

#[test]
fn jsonl_parse_errors_carry_line_numbers() {
    let events: Vec<_> = (0..3).map(|k| event(0, k, DEFAULT_ORIGIN.plus(k as u64))).collect();
    let text = write_events_jsonl(&events);
    assert_eq!(read_events_jsonl(text.as_bytes()).unwrap(), events);
    let broken = format!("{text}\n{{\"event_id\": 5}}\n");
    match read_events_jsonl(broken.as_bytes()) {
        Err(EdgeError::Parse { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn concurrent_devices_share_chains_and_store() {
    let rig = Rig::new(8);
    rig.at(DEFAULT_ORIGIN.plus(100));
    let records: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|d| {
                let rig = &rig;
                s.spawn(move || {
                    (0..25)
                        .map(|k| rig.devices[d].process_event(&event(d, k, DEFAULT_ORIGIN.plus(50)), &rig.dc).unwrap())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(records.len(), 200);
    assert_eq!(rig.dc.len(), 200);
    let ids: HashSet<_> = records.iter().flat_map(|r| r.entries.iter().map(|e| e.tx_id.unwrap())).collect();
    assert_eq!(ids.len(), 400);
    rig.at(DEFAULT_ORIGIN.plus(600));
    for id in &ids {
        let tx = rig.eos.query_tx(id).or_else(|| rig.xlm.query_tx(id)).unwrap();
        assert_eq!(tx.status, TxStatus::Confirmed);
    }
    rig.eos.verify_integrity().unwrap();
    rig.xlm.verify_integrity().unwrap();
}
