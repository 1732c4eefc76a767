//! Per-node time series as kept by the ingestion service.
//!
//! Ingest is split in two so a caller can persist a record before it
//! becomes visible: [`NodeSeries::admit`] decides the outcome without
//! mutating anything, [`NodeSeries::commit`] applies a stored record.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec::Vec;

use thiserror::Error;

use crate::aqi::{classify_centi, AqiStatus, Category};
use crate::sensor::adc_max;
use crate::wire::Telemetry;

/// Number of most recent sequence numbers remembered per node.
pub const DEDUP_WINDOW: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadingRecord {
    pub node_id: u16,
    pub seq: u32,
    pub ts_ms: u64,
    pub raw_adc: u16,
    pub ppm: f64,
    pub status: AqiStatus,
    pub received_at_ms: u64,
    pub out_of_order: bool,
}

impl ReadingRecord {
    fn key(&self) -> (u64, u32) {
        (self.ts_ms, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlertRecord {
    pub node_id: u16,
    pub ts_ms: u64,
    pub from: Category,
    pub to: Category,
    pub ppm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IngestOutcome {
    Stored,
    Duplicate,
    Inconsistent,
    OutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Admission {
    Store {
        record: ReadingRecord,
        alert: Option<AlertRecord>,
    },
    Reject(IngestOutcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("range start {from} is after end {to}")]
pub struct RangeError {
    pub from: u64,
    pub to: u64,
}

/// Set of the most recent `capacity` sequence numbers, evicting in insertion order.
#[derive(Debug, Clone)]
pub struct DedupWindow {
    order: VecDeque<u32>,
    seen: BTreeSet<u32>,
    capacity: usize,
}

impl DedupWindow {
    pub fn new(capacity: usize) -> Self {
        DedupWindow {
            order: VecDeque::new(),
            seen: BTreeSet::new(),
            capacity,
        }
    }

    pub fn contains(&self, seq: u32) -> bool {
        self.seen.contains(&seq)
    }

    pub fn insert(&mut self, seq: u32) {
        if !self.seen.insert(seq) {
            return;
        }
        self.order.push_back(seq);
        if self.order.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Rejection tallies for one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RejectCounts {
    pub duplicate: u64,
    pub inconsistent: u64,
    pub out_of_range: u64,
    /// Records admitted but lost because persistence failed.
    pub lost: u64,
}

#[derive(Debug, Clone)]
pub struct NodeSeries {
    node_id: u16,
    adc_bits: u8,
    records: Vec<ReadingRecord>,
    alerts: Vec<AlertRecord>,
    window: DedupWindow,
    max_ts: Option<u64>,
    last_in_order: Option<Category>,
    rejects: RejectCounts,
}

impl NodeSeries {
    pub fn new(node_id: u16, adc_bits: u8) -> Self {
        NodeSeries {
            node_id,
            adc_bits,
            records: Vec::new(),
            alerts: Vec::new(),
            window: DedupWindow::new(DEDUP_WINDOW),
            max_ts: None,
            last_in_order: None,
            rejects: RejectCounts::default(),
        }
    }

    pub fn node_id(&self) -> u16 {
        self.node_id
    }

    /// Decides what to do with a telemetry payload without changing state.
    pub fn admit(
        &self,
        seq: u32,
        ts_ms: u64,
        payload: &Telemetry,
        received_at_ms: u64,
    ) -> Admission {
        if payload.raw_adc > adc_max(self.adc_bits) {
            return Admission::Reject(IngestOutcome::OutOfRange);
        }
        let status = classify_centi(payload.ppm_centi);
        if status.code() != payload.status_code {
            return Admission::Reject(IngestOutcome::Inconsistent);
        }
        if self.window.contains(seq) {
            return Admission::Reject(IngestOutcome::Duplicate);
        }
        let record = ReadingRecord {
            node_id: self.node_id,
            seq,
            ts_ms,
            raw_adc: payload.raw_adc,
            ppm: payload.ppm(),
            status,
            received_at_ms,
            out_of_order: self.max_ts.is_some_and(|m| ts_ms < m),
        };
        let alert = self.evaluate_alert(&record);
        Admission::Store { record, alert }
    }

    /// Alert for a category change against the previous in-order record.
    pub fn evaluate_alert(&self, record: &ReadingRecord) -> Option<AlertRecord> {
        if record.out_of_order {
            return None;
        }
        let prev = self.last_in_order?;
        let to = record.status.category();
        (prev != to).then_some(AlertRecord {
            node_id: self.node_id,
            ts_ms: record.ts_ms,
            from: prev,
            to,
            ppm: record.ppm,
        })
    }

    /// Makes an admitted record (and its alert, if any) visible.
    pub fn commit(&mut self, record: ReadingRecord, alert: Option<AlertRecord>) {
        self.window.insert(record.seq);
        self.max_ts = Some(self.max_ts.map_or(record.ts_ms, |m| m.max(record.ts_ms)));
        if !record.out_of_order {
            self.last_in_order = Some(record.status.category());
        }
        let key = record.key();
        let pos = self.records.partition_point(|r| r.key() <= key);
        self.records.insert(pos, record);
        if let Some(a) = alert {
            self.alerts.push(a);
        }
    }

    pub fn note_rejection(&mut self, outcome: IngestOutcome) {
        match outcome {
            IngestOutcome::Stored => {}
            IngestOutcome::Duplicate => self.rejects.duplicate += 1,
            IngestOutcome::Inconsistent => self.rejects.inconsistent += 1,
            IngestOutcome::OutOfRange => self.rejects.out_of_range += 1,
        }
    }

    pub fn note_lost(&mut self) {
        self.rejects.lost += 1;
    }

    /// Admit and commit in one step, for callers without a persistence layer.
    pub fn ingest(
        &mut self,
        seq: u32,
        ts_ms: u64,
        payload: &Telemetry,
        received_at_ms: u64,
    ) -> (IngestOutcome, Option<AlertRecord>) {
        match self.admit(seq, ts_ms, payload, received_at_ms) {
            Admission::Store { record, alert } => {
                self.commit(record, alert);
                (IngestOutcome::Stored, alert)
            }
            Admission::Reject(outcome) => {
                self.note_rejection(outcome);
                (outcome, None)
            }
        }
    }

    /// Replays a previously persisted alert.
    pub fn restore_alert(&mut self, alert: AlertRecord) {
        self.alerts.push(alert);
    }

    pub fn latest(&self) -> Option<&ReadingRecord> {
        self.records.last()
    }

    /// Records with `from_ms <= ts_ms <= to_ms`, ordered by `(ts_ms, seq)`.
    pub fn range(&self, from_ms: u64, to_ms: u64) -> Result<&[ReadingRecord], RangeError> {
        if from_ms > to_ms {
            return Err(RangeError {
                from: from_ms,
                to: to_ms,
            });
        }
        let lo = self.records.partition_point(|r| r.ts_ms < from_ms);
        let hi = self.records.partition_point(|r| r.ts_ms <= to_ms);
        Ok(&self.records[lo..hi])
    }

    pub fn records(&self) -> &[ReadingRecord] {
        &self.records
    }

    pub fn alerts(&self) -> &[AlertRecord] {
        &self.alerts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_ts(&self) -> Option<u64> {
        self.max_ts
    }

    pub fn rejects(&self) -> RejectCounts {
        self.rejects
    }
}
