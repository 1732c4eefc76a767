//! Time-series store behind the ingestion service.
//!
//! Each node has an in-memory [`NodeSeries`] guarded by its own mutex and,
//! when a data directory is configured, two append-only JSON-lines logs:
//! `<node_id>.readings.jsonl` and `<node_id>.alerts.jsonl`. A record is
//! written to its log before it becomes visible to queries. On startup the
//! logs are replayed to rebuild indexes, dedup windows and alert state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use gasduino_core::aqi::{classify, AqiStatus, Category};
use gasduino_core::series::{
    Admission, AlertRecord, IngestOutcome, NodeSeries, RangeError, ReadingRecord, RejectCounts,
};
use gasduino_core::wire::{Frame, FrameBody};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("data directory {path}: {source}")]
    DataDir { path: PathBuf, source: io::Error },
    #[error("reading log {path}: {source}")]
    Recover { path: PathBuf, source: io::Error },
    #[error("failed to persist record for node {node_id}: {source}")]
    Write { node_id: u16, source: io::Error },
    #[error("not a telemetry frame")]
    NotTelemetry,
}

/// One line of `<node_id>.readings.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct ReadingLine {
    node_id: u16,
    seq: u32,
    ts_ms: u64,
    raw_adc: u16,
    ppm: f64,
    status: String,
    received_at_ms: u64,
    out_of_order: bool,
}

impl From<&ReadingRecord> for ReadingLine {
    fn from(r: &ReadingRecord) -> Self {
        ReadingLine {
            node_id: r.node_id,
            seq: r.seq,
            ts_ms: r.ts_ms,
            raw_adc: r.raw_adc,
            ppm: r.ppm,
            status: r.status.category().name().to_owned(),
            received_at_ms: r.received_at_ms,
            out_of_order: r.out_of_order,
        }
    }
}

impl ReadingLine {
    /// Rebuilds the record, re-deriving status from ppm.
    fn into_record(self) -> Option<ReadingRecord> {
        let status: AqiStatus = classify(self.ppm).ok()?;
        if status.category().name() != self.status {
            return None;
        }
        Some(ReadingRecord {
            node_id: self.node_id,
            seq: self.seq,
            ts_ms: self.ts_ms,
            raw_adc: self.raw_adc,
            ppm: self.ppm,
            status,
            received_at_ms: self.received_at_ms,
            out_of_order: self.out_of_order,
        })
    }
}

/// One line of `<node_id>.alerts.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct AlertLine {
    node_id: u16,
    ts_ms: u64,
    from_category: String,
    to_category: String,
    ppm: f64,
}

impl From<&AlertRecord> for AlertLine {
    fn from(a: &AlertRecord) -> Self {
        AlertLine {
            node_id: a.node_id,
            ts_ms: a.ts_ms,
            from_category: a.from.name().to_owned(),
            to_category: a.to.name().to_owned(),
            ppm: a.ppm,
        }
    }
}

impl AlertLine {
    fn into_record(self) -> Option<AlertRecord> {
        let from: Category = self.from_category.parse().ok()?;
        let to: Category = self.to_category.parse().ok()?;
        (from != to).then_some(AlertRecord {
            node_id: self.node_id,
            ts_ms: self.ts_ms,
            from,
            to,
            ppm: self.ppm,
        })
    }
}

/// What recovery found on disk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub nodes: usize,
    pub records: usize,
    pub alerts: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodeSummary {
    pub node_id: u16,
    /// Highest `ts_ms` stored for the node.
    pub last_seen_ms: u64,
    pub record_count: usize,
}

struct NodeEntry {
    series: NodeSeries,
    readings: Option<File>,
    alerts: Option<File>,
}

pub struct Store {
    data_dir: Option<PathBuf>,
    adc_bits: u8,
    nodes: RwLock<BTreeMap<u16, Arc<Mutex<NodeEntry>>>>,
    sessions: Mutex<HashMap<u16, u64>>,
}

fn readings_path(dir: &Path, node_id: u16) -> PathBuf {
    dir.join(format!("{node_id}.readings.jsonl"))
}

fn alerts_path(dir: &Path, node_id: u16) -> PathBuf {
    dir.join(format!("{node_id}.alerts.jsonl"))
}

fn append_line<T: Serialize>(file: &mut File, value: &T) -> io::Result<()> {
    let mut line = serde_json::to_vec(value).map_err(io::Error::other)?;
    line.push(b'\n');
    file.write_all(&line)
}

fn open_append(path: &Path) -> io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

/// Reads a JSON-lines log. A bad final line (torn write) is truncated away;
/// bad lines elsewhere are skipped. Both cases are reported as warnings.
fn replay_log<T, F>(path: &Path, warnings: &mut Vec<String>, mut accept: F) -> io::Result<usize>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(T) -> bool,
{
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e),
    };
    let mut reader = BufReader::new(file);
    let mut good_end: u64 = 0;
    let mut offset: u64 = 0;
    let mut count = 0;
    let mut torn = None;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        let line_start = offset;
        offset += n as u64;
        let complete = buf.last() == Some(&b'\n');
        let parsed = serde_json::from_slice::<T>(&buf).ok();
        let ok = match parsed {
            Some(v) if complete => accept(v),
            _ => false,
        };
        if ok {
            count += 1;
            good_end = offset;
        } else if !complete || reader.fill_buf()?.is_empty() {
            torn = Some(line_start);
            break;
        } else {
            warnings.push(format!(
                "{}: skipped unreadable record at byte {line_start}",
                path.display()
            ));
            good_end = offset;
        }
    }
    if let Some(at) = torn {
        let msg = format!(
            "{}: truncated torn tail at byte {at} ({} bytes discarded)",
            path.display(),
            offset - at
        );
        warn!("{msg}");
        warnings.push(msg);
        OpenOptions::new()
            .write(true)
            .open(path)?
            .set_len(good_end)?;
    }
    Ok(count)
}

impl Store {
    /// Store without persistence.
    pub fn in_memory(adc_bits: u8) -> Self {
        Store {
            data_dir: None,
            adc_bits,
            nodes: RwLock::new(BTreeMap::new()),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    /// Opens (creating if needed) a data directory and replays its logs.
    pub fn open(
        data_dir: impl AsRef<Path>,
        adc_bits: u8,
    ) -> Result<(Self, RecoveryReport), StoreError> {
        let dir = data_dir.as_ref().to_path_buf();
        let dir_err = |source| StoreError::DataDir {
            path: dir.clone(),
            source,
        };
        fs::create_dir_all(&dir).map_err(dir_err)?;
        let probe = dir.join(".write-probe");
        File::create(&probe)
            .and_then(|mut f| f.write_all(b"ok"))
            .and_then(|_| fs::remove_file(&probe))
            .map_err(dir_err)?;

        let mut node_ids: Vec<u16> = fs::read_dir(&dir)
            .map_err(dir_err)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let id = name
                    .strip_suffix(".readings.jsonl")
                    .or_else(|| name.strip_suffix(".alerts.jsonl"))?;
                id.parse().ok()
            })
            .collect();
        node_ids.sort_unstable();
        node_ids.dedup();

        let mut report = RecoveryReport::default();
        let mut nodes = BTreeMap::new();
        for node_id in node_ids {
            let mut series = NodeSeries::new(node_id, adc_bits);
            let rpath = readings_path(&dir, node_id);
            report.records += replay_log::<ReadingLine, _>(&rpath, &mut report.warnings, |line| {
                match line.into_record() {
                    Some(r) if r.node_id == node_id => {
                        series.commit(r, None);
                        true
                    }
                    _ => false,
                }
            })
            .map_err(|source| StoreError::Recover {
                path: rpath.clone(),
                source,
            })?;
            let apath = alerts_path(&dir, node_id);
            report.alerts += replay_log::<AlertLine, _>(&apath, &mut report.warnings, |line| {
                match line.into_record() {
                    Some(a) if a.node_id == node_id => {
                        series.restore_alert(a);
                        true
                    }
                    _ => false,
                }
            })
            .map_err(|source| StoreError::Recover {
                path: apath.clone(),
                source,
            })?;
            let entry = NodeEntry {
                series,
                readings: Some(open_append(&rpath).map_err(dir_err)?),
                alerts: Some(open_append(&apath).map_err(dir_err)?),
            };
            nodes.insert(node_id, Arc::new(Mutex::new(entry)));
        }
        report.nodes = nodes.len();
        if report.records > 0 {
            info!(
                "recovered {} records and {} alerts for {} nodes from {}",
                report.records,
                report.alerts,
                report.nodes,
                dir.display()
            );
        }
        let store = Store {
            data_dir: Some(dir),
            adc_bits,
            nodes: RwLock::new(nodes),
            sessions: Mutex::new(HashMap::new()),
        };
        Ok((store, report))
    }

    pub fn adc_bits(&self) -> u8 {
        self.adc_bits
    }

    fn entry(&self, node_id: u16) -> Option<Arc<Mutex<NodeEntry>>> {
        self.nodes.read().unwrap().get(&node_id).cloned()
    }

    fn entry_or_create(&self, node_id: u16) -> Result<Arc<Mutex<NodeEntry>>, StoreError> {
        if let Some(e) = self.entry(node_id) {
            return Ok(e);
        }
        let mut nodes = self.nodes.write().unwrap();
        if let Some(e) = nodes.get(&node_id) {
            return Ok(Arc::clone(e));
        }
        let (readings, alerts) = match &self.data_dir {
            Some(dir) => {
                let open = |p: PathBuf| {
                    open_append(&p).map_err(|source| StoreError::Write { node_id, source })
                };
                (
                    Some(open(readings_path(dir, node_id))?),
                    Some(open(alerts_path(dir, node_id))?),
                )
            }
            None => (None, None),
        };
        let entry = Arc::new(Mutex::new(NodeEntry {
            series: NodeSeries::new(node_id, self.adc_bits),
            readings,
            alerts,
        }));
        nodes.insert(node_id, Arc::clone(&entry));
        Ok(entry)
    }

    /// Validates, deduplicates, persists and indexes one telemetry frame.
    ///
    /// Returns the outcome and any alert the record raised. A persistence
    /// failure loses the record (it is counted, not retried).
    pub fn ingest(
        &self,
        frame: &Frame,
        received_at_ms: u64,
    ) -> Result<(IngestOutcome, Option<AlertRecord>), StoreError> {
        let FrameBody::Telemetry(payload) = frame.body else {
            return Err(StoreError::NotTelemetry);
        };
        let entry = self.entry_or_create(frame.node_id)?;
        let mut entry = entry.lock().unwrap();
        match entry
            .series
            .admit(frame.seq, frame.ts_ms, &payload, received_at_ms)
        {
            Admission::Reject(outcome) => {
                entry.series.note_rejection(outcome);
                Ok((outcome, None))
            }
            Admission::Store { record, alert } => {
                let node_id = frame.node_id;
                let NodeEntry {
                    readings,
                    alerts,
                    series,
                } = &mut *entry;
                let persisted = readings
                    .as_mut()
                    .map_or(Ok(()), |f| append_line(f, &ReadingLine::from(&record)))
                    .and_then(|_| match (alert.as_ref(), alerts.as_mut()) {
                        (Some(a), Some(f)) => append_line(f, &AlertLine::from(a)),
                        _ => Ok(()),
                    });
                if let Err(source) = persisted {
                    series.note_lost();
                    return Err(StoreError::Write { node_id, source });
                }
                series.commit(record, alert);
                Ok((IngestOutcome::Stored, alert))
            }
        }
    }

    /// Records `conn_id` as the live connection for `node_id`; returns the
    /// connection it superseded, if any.
    pub fn open_session(&self, node_id: u16, conn_id: u64) -> Option<u64> {
        self.sessions
            .lock()
            .unwrap()
            .insert(node_id, conn_id)
            .filter(|&old| old != conn_id)
    }

    pub fn close_session(&self, node_id: u16, conn_id: u64) {
        let mut sessions = self.sessions.lock().unwrap();
        if sessions.get(&node_id) == Some(&conn_id) {
            sessions.remove(&node_id);
        }
    }

    pub fn session(&self, node_id: u16) -> Option<u64> {
        self.sessions.lock().unwrap().get(&node_id).copied()
    }

    pub fn contains(&self, node_id: u16) -> bool {
        self.nodes.read().unwrap().contains_key(&node_id)
    }

    pub fn nodes(&self) -> Vec<NodeSummary> {
        let entries: Vec<_> = self.nodes.read().unwrap().values().cloned().collect();
        entries
            .iter()
            .map(|e| {
                let e = e.lock().unwrap();
                NodeSummary {
                    node_id: e.series.node_id(),
                    last_seen_ms: e.series.max_ts().unwrap_or(0),
                    record_count: e.series.len(),
                }
            })
            .collect()
    }

    pub fn latest(&self, node_id: u16) -> Option<ReadingRecord> {
        let entry = self.entry(node_id)?;
        let e = entry.lock().unwrap();
        e.series.latest().copied()
    }

    /// Unknown nodes yield an empty list.
    pub fn range(
        &self,
        node_id: u16,
        from_ms: u64,
        to_ms: u64,
    ) -> Result<Vec<ReadingRecord>, RangeError> {
        if from_ms > to_ms {
            return Err(RangeError {
                from: from_ms,
                to: to_ms,
            });
        }
        let Some(entry) = self.entry(node_id) else {
            return Ok(Vec::new());
        };
        let e = entry.lock().unwrap();
        e.series.range(from_ms, to_ms).map(<[_]>::to_vec)
    }

    pub fn alerts(&self, node_id: u16) -> Option<Vec<AlertRecord>> {
        let entry = self.entry(node_id)?;
        let e = entry.lock().unwrap();
        Some(e.series.alerts().to_vec())
    }

    pub fn rejects(&self, node_id: u16) -> Option<RejectCounts> {
        let entry = self.entry(node_id)?;
        let e = entry.lock().unwrap();
        Some(e.series.rejects())
    }

    pub fn record_count(&self, node_id: u16) -> usize {
        self.entry(node_id)
            .map_or(0, |e| e.lock().unwrap().series.len())
    }

    pub fn total_records(&self) -> usize {
        self.nodes().iter().map(|n| n.record_count).sum()
    }
}
