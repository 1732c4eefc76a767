//! JSON shapes of the HTTP query API, shared by the server and the CLI client.

use gasduino_core::aqi::{indicator_for, Category};
use gasduino_core::series::{AlertRecord, ReadingRecord};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordJson {
    pub node_id: u16,
    pub seq: u32,
    pub ts_ms: u64,
    pub raw_adc: u16,
    pub ppm: f64,
    pub status: String,
    pub out_of_scale: bool,
    pub indicator: String,
    pub out_of_order: bool,
}

impl From<&ReadingRecord> for RecordJson {
    fn from(r: &ReadingRecord) -> Self {
        RecordJson {
            node_id: r.node_id,
            seq: r.seq,
            ts_ms: r.ts_ms,
            raw_adc: r.raw_adc,
            ppm: r.ppm,
            status: r.status.category().name().to_owned(),
            out_of_scale: r.status.is_out_of_scale(),
            indicator: indicator_for(r.status).name().to_owned(),
            out_of_order: r.out_of_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeJson {
    pub records: Vec<RecordJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertJson {
    pub ts_ms: u64,
    pub from: String,
    pub to: String,
    pub ppm: f64,
}

impl From<&AlertRecord> for AlertJson {
    fn from(a: &AlertRecord) -> Self {
        AlertJson {
            ts_ms: a.ts_ms,
            from: a.from.name().to_owned(),
            to: a.to.name().to_owned(),
            ppm: a.ppm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertsJson {
    pub alerts: Vec<AlertJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub node_id: u16,
    pub last_seen_ms: u64,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorJson {
    pub error: String,
}

pub const UNKNOWN_NODE: &str = "unknown node";
pub const BAD_RANGE: &str = "bad range";

impl RecordJson {
    pub fn category(&self) -> Option<Category> {
        self.status.parse().ok()
    }
}
