//! Blocking client for the HTTP query API, plus CSV rendering.

use std::time::Duration;

use thiserror::Error;

use crate::api::{AlertJson, AlertsJson, ErrorJson, RangeJson, RecordJson};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("cannot reach server: {0}")]
    Unreachable(String),
    #[error("unknown node")]
    NotFound,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("server returned {status}: {body}")]
    Server { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
}

pub struct Client {
    base: String,
    agent: ureq::Agent,
}

/// A decoded response together with the body text it came from.
pub struct Fetched<T> {
    pub raw: String,
    pub value: T,
}

impl Client {
    /// `http` is `host:port`; a `0.0.0.0` host is contacted on loopback.
    pub fn new(http: &str) -> Self {
        let addr = http.strip_prefix("http://").unwrap_or(http);
        let addr = match addr.strip_prefix("0.0.0.0:") {
            Some(port) => format!("127.0.0.1:{port}"),
            None => addr.to_owned(),
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Client {
            base: format!("http://{addr}"),
            agent,
        }
    }

    pub fn get_raw(&self, path: &str) -> Result<String, QueryError> {
        let url = format!("{}{path}", self.base);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| QueryError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| QueryError::Unreachable(e.to_string()))?;
        match status {
            200 => Ok(body),
            404 => Err(QueryError::NotFound),
            400 => {
                let msg = serde_json::from_str::<ErrorJson>(&body)
                    .map(|e| e.error)
                    .unwrap_or(body);
                Err(QueryError::BadRequest(msg))
            }
            _ => Err(QueryError::Server { status, body }),
        }
    }

    fn fetch<T: for<'de> serde::Deserialize<'de>>(
        &self,
        path: &str,
    ) -> Result<Fetched<T>, QueryError> {
        let raw = self.get_raw(path)?;
        let value = serde_json::from_str(&raw).map_err(|e| QueryError::Decode(e.to_string()))?;
        Ok(Fetched { raw, value })
    }

    pub fn health(&self) -> Result<String, QueryError> {
        self.get_raw("/healthz")
    }

    pub fn latest(&self, node: u16) -> Result<Fetched<RecordJson>, QueryError> {
        self.fetch(&format!("/nodes/{node}/latest"))
    }

    pub fn range(
        &self,
        node: u16,
        from: Option<u64>,
        to: Option<u64>,
    ) -> Result<Fetched<RangeJson>, QueryError> {
        let mut params = Vec::new();
        if let Some(f) = from {
            params.push(format!("from={f}"));
        }
        if let Some(t) = to {
            params.push(format!("to={t}"));
        }
        let query = if params.is_empty() {
            String::new()
        } else {
            format!("?{}", params.join("&"))
        };
        self.fetch(&format!("/nodes/{node}/range{query}"))
    }

    pub fn alerts(&self, node: u16) -> Result<Fetched<AlertsJson>, QueryError> {
        self.fetch(&format!("/nodes/{node}/alerts"))
    }
}

/// Number formatting identical to the JSON responses.
fn num(x: f64) -> String {
    serde_json::to_string(&x).unwrap_or_else(|_| x.to_string())
}

pub const RECORD_CSV_HEADER: &str = "ts_ms,node_id,seq,raw_adc,ppm,status,out_of_scale";
pub const ALERT_CSV_HEADER: &str = "ts_ms,node_id,from,to,ppm";

pub fn records_csv(records: &[RecordJson]) -> String {
    let mut out = String::from(RECORD_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.ts_ms,
            r.node_id,
            r.seq,
            r.raw_adc,
            num(r.ppm),
            r.status,
            r.out_of_scale
        ));
    }
    out
}

pub fn alerts_csv(node: u16, alerts: &[AlertJson]) -> String {
    let mut out = String::from(ALERT_CSV_HEADER);
    out.push('\n');
    for a in alerts {
        out.push_str(&format!(
            "{},{node},{},{},{}\n",
            a.ts_ms,
            a.from,
            a.to,
            num(a.ppm)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let r = RecordJson {
            node_id: 2,
            seq: 9,
            ts_ms: 1000,
            raw_adc: 512,
            ppm: 70.0,
            status: "moderate".into(),
            out_of_scale: false,
            indicator: "blue".into(),
            out_of_order: false,
        };
        assert_eq!(
            records_csv(&[r]),
            "ts_ms,node_id,seq,raw_adc,ppm,status,out_of_scale\n1000,2,9,512,70.0,moderate,false\n"
        );
        assert_eq!(records_csv(&[]).lines().count(), 1);
    }

    #[test]
    fn loopback_for_wildcard_host() {
        assert_eq!(Client::new("0.0.0.0:8080").base, "http://127.0.0.1:8080");
        assert_eq!(Client::new("example:1").base, "http://example:1");
    }
}
