//! Ingestion and query service over real sockets.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use gasduino::api::{AlertsJson, NodeJson, RangeJson, RecordJson};
use gasduino::client::{Client, QueryError};
use gasduino::server::{ServerConfig, ServerHandle};
use gasduino_core::wire::{self, crc16, Frame, FrameBody, Telemetry, ACK_LEN};

fn start(dir: &std::path::Path) -> ServerHandle {
    ServerHandle::start(&ServerConfig {
        listen: "127.0.0.1:0".into(),
        http: "127.0.0.1:0".into(),
        data_dir: dir.to_path_buf(),
        adc_bits: 10,
    })
    .unwrap()
}

fn client(h: &ServerHandle) -> Client {
    Client::new(&h.http_addr().to_string())
}

fn connect(h: &ServerHandle, node: u16, seq: u32) -> TcpStream {
    let mut s = TcpStream::connect(h.ingest_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(&wire::encode(&Frame::hello(node, seq, 0), 10).unwrap())
        .unwrap();
    let mut ack = [0u8; ACK_LEN];
    s.read_exact(&mut ack).unwrap();
    let (f, _) = wire::decode(&ack, 10).unwrap();
    assert_eq!((f.node_id, f.seq, f.body), (node, seq, FrameBody::Ack));
    s
}

fn telemetry(node: u16, seq: u32, ts: u64, centi: u32) -> Vec<u8> {
    wire::encode(
        &Frame::telemetry(node, seq, ts, Telemetry::classified(500, centi)),
        10,
    )
    .unwrap()
}

/// Rewrites one body byte of an encoded frame and fixes up the checksum.
fn patch(mut bytes: Vec<u8>, at: usize, value: u8) -> Vec<u8> {
    bytes[at] = value;
    let n = bytes.len();
    let crc = crc16(&bytes[..n - 2]);
    bytes[n - 2..].copy_from_slice(&crc.to_be_bytes());
    bytes
}

fn wait_for(mut cond: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while !cond() {
        assert!(
            Instant::now() < deadline,
            "timed out waiting for the server"
        );
        std::thread::sleep(Duration::from_millis(10));
    }
}

#[test]
fn healthz_and_unknown_node() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let c = client(&h);
    assert_eq!(c.health().unwrap(), r#"{"status":"ok"}"#);
    assert!(matches!(c.latest(1), Err(QueryError::NotFound)));
    assert!(matches!(c.range(1, None, None), Err(QueryError::NotFound)));
    assert!(matches!(c.alerts(1), Err(QueryError::NotFound)));
    assert_eq!(c.get_raw("/nodes").unwrap(), "[]");
    let err = c.get_raw("/nodes/1/latest").unwrap_err();
    assert!(matches!(err, QueryError::NotFound));
}

#[test]
fn ingest_outcomes_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut s = connect(&h, 3, 0);
    let good = telemetry(3, 0, 1000, 4500);
    s.write_all(&good).unwrap();
    s.write_all(&good).unwrap(); // duplicate
                                 // Claims Good while carrying 175.00 PPM.
    let lying = patch(telemetry(3, 1, 2000, 17_500), 24, 0);
    s.write_all(&lying).unwrap();
    // raw_adc 0xFFFF does not fit a 10-bit converter.
    let wide = wire::encode(
        &Frame::telemetry(3, 2, 3000, Telemetry::classified(u16::MAX, 100)),
        16,
    )
    .unwrap();
    s.write_all(&wide).unwrap();
    s.write_all(&telemetry(3, 3, 4000, 6000)).unwrap();
    s.flush().unwrap();

    let store = h.store().clone();
    wait_for(|| {
        let r = store.rejects(3).unwrap_or_default();
        store.record_count(3) == 2 && r.duplicate == 1 && r.inconsistent == 1 && r.out_of_range == 1
    });

    let c = client(&h);
    let latest = c.latest(3).unwrap().value;
    assert_eq!(
        (
            latest.seq,
            latest.status.as_str(),
            latest.indicator.as_str()
        ),
        (3, "moderate", "blue")
    );
    let alerts = c.alerts(3).unwrap().value.alerts;
    assert_eq!(alerts.len(), 1);
    assert_eq!(
        (alerts[0].from.as_str(), alerts[0].to.as_str()),
        ("good", "moderate")
    );
    let nodes: Vec<NodeJson> = serde_json::from_str(&c.get_raw("/nodes").unwrap()).unwrap();
    assert_eq!(nodes.len(), 1);
    assert_eq!(
        (
            nodes[0].node_id,
            nodes[0].record_count,
            nodes[0].last_seen_ms
        ),
        (3, 2, 4000)
    );
}

#[test]
fn telemetry_before_hello_closes_connection() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut s = TcpStream::connect(h.ingest_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(&telemetry(8, 0, 1, 100)).unwrap();
    let mut buf = [0u8; 1];
    assert_eq!(s.read(&mut buf).unwrap_or(0), 0);
    assert!(!h.store().contains(8));
}

#[test]
fn range_queries_and_bad_range() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut s = connect(&h, 1, 0);
    for seq in 0..10u32 {
        s.write_all(&telemetry(1, seq, 1000 * u64::from(seq), 4000 + seq * 100))
            .unwrap();
    }
    let store = h.store().clone();
    wait_for(|| store.record_count(1) == 10);
    let c = client(&h);
    let all = c.range(1, None, None).unwrap().value.records;
    assert_eq!(all.len(), 10);
    let half = c.range(1, Some(2000), Some(6000)).unwrap().value.records;
    assert_eq!(
        half.iter().map(|r| r.seq).collect::<Vec<_>>(),
        vec![2, 3, 4, 5, 6]
    );
    assert!(c
        .range(1, Some(100), Some(200))
        .unwrap()
        .value
        .records
        .is_empty());
    assert!(
        matches!(c.range(1, Some(9), Some(1)), Err(QueryError::BadRequest(m)) if m == "bad range")
    );
    assert!(matches!(
        c.get_raw("/nodes/1/range?from=abc"),
        Err(QueryError::BadRequest(_))
    ));
}

#[test]
fn out_of_order_arrivals_are_sorted_and_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut s = connect(&h, 2, 0);
    for (seq, ts) in [(0u32, 3000u64), (1, 1000), (2, 2000), (3, 2000)] {
        s.write_all(&telemetry(2, seq, ts, 2000)).unwrap();
    }
    let store = h.store().clone();
    wait_for(|| store.record_count(2) == 4);
    let c = client(&h);
    let recs: Vec<RecordJson> = c.range(2, None, None).unwrap().value.records;
    let order: Vec<(u64, u32, bool)> = recs
        .iter()
        .map(|r| (r.ts_ms, r.seq, r.out_of_order))
        .collect();
    assert_eq!(
        order,
        vec![
            (1000, 1, true),
            (2000, 2, true),
            (2000, 3, true),
            (3000, 0, false)
        ]
    );
    assert_eq!(c.latest(2).unwrap().value.seq, 0);
}

#[test]
fn second_connection_supersedes_first_without_losing_data() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut a = connect(&h, 5, 0);
    a.write_all(&telemetry(5, 0, 10, 100)).unwrap();
    let mut b = connect(&h, 5, 1);
    b.write_all(&telemetry(5, 1, 20, 100)).unwrap();
    a.write_all(&telemetry(5, 2, 30, 100)).unwrap();
    let store = h.store().clone();
    wait_for(|| store.record_count(5) == 3);
    drop(a);
    drop(b);
    wait_for(|| store.session(5).is_none());
}

#[test]
fn restart_keeps_data_queryable() {
    let dir = tempfile::tempdir().unwrap();
    let before;
    {
        let h = start(dir.path());
        let mut s = connect(&h, 7, 0);
        for seq in 0..20u32 {
            s.write_all(&telemetry(7, seq, u64::from(seq), 3000 + seq * 700))
                .unwrap();
        }
        let store = h.store().clone();
        wait_for(|| store.record_count(7) == 20);
        let c = client(&h);
        before = (
            c.get_raw("/nodes/7/range").unwrap(),
            c.get_raw("/nodes/7/alerts").unwrap(),
            c.get_raw("/nodes").unwrap(),
        );
        h.shutdown();
    }
    let h = start(dir.path());
    assert!(h.recovery().warnings.is_empty());
    let c = client(&h);
    let after = (
        c.get_raw("/nodes/7/range").unwrap(),
        c.get_raw("/nodes/7/alerts").unwrap(),
        c.get_raw("/nodes").unwrap(),
    );
    assert_eq!(before, after);
    let range: RangeJson = serde_json::from_str(&after.0).unwrap();
    assert_eq!(range.records.len(), 20);
    let alerts: AlertsJson = serde_json::from_str(&after.1).unwrap();
    assert_eq!(alerts.alerts.len(), 2);

    // Replays of already-stored seqs are still recognised after recovery.
    let mut s = connect(&h, 7, 0);
    s.write_all(&telemetry(7, 5, 5, 6500)).unwrap();
    let store = h.store().clone();
    wait_for(|| store.rejects(7).unwrap_or_default().duplicate == 1);
    assert_eq!(store.record_count(7), 20);
}

#[test]
fn persistence_files_use_record_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut s = connect(&h, 12, 0);
    s.write_all(&telemetry(12, 0, 1, 100)).unwrap();
    s.write_all(&telemetry(12, 1, 2, 20_000)).unwrap();
    let store = h.store().clone();
    wait_for(|| store.record_count(12) == 2);
    h.shutdown();
    let readings = std::fs::read_to_string(dir.path().join("12.readings.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(readings.lines().next().unwrap()).unwrap();
    let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            "node_id",
            "out_of_order",
            "ppm",
            "raw_adc",
            "received_at_ms",
            "seq",
            "status",
            "ts_ms"
        ]
    );
    let alerts = std::fs::read_to_string(dir.path().join("12.alerts.jsonl")).unwrap();
    let a: serde_json::Value = serde_json::from_str(alerts.trim()).unwrap();
    assert_eq!(a["from_category"], "good");
    assert_eq!(a["to_category"], "unhealthy");
}
