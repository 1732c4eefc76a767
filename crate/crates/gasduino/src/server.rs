//! Ingestion service: a TCP listener speaking the wire protocol and an HTTP
//! JSON query API over the same [`Store`].

use std::collections::HashMap;
use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use gasduino_core::wire::{self, Frame, FrameBody, StreamDecoder, StreamItem};
use log::{debug, info, warn};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{oneshot, watch};

use crate::api::{self, AlertJson, AlertsJson, ErrorJson, NodeJson, RangeJson, RecordJson};
use crate::clock::now_epoch_ms;
use crate::store::{RecoveryReport, Store, StoreError};

pub const DEFAULT_INGEST_ADDR: &str = "0.0.0.0:7474";
pub const DEFAULT_HTTP_ADDR: &str = "0.0.0.0:8080";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: String,
    pub http: String,
    pub data_dir: PathBuf,
    pub adc_bits: u8,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: DEFAULT_INGEST_ADDR.into(),
            http: DEFAULT_HTTP_ADDR.into(),
            data_dir: PathBuf::from("./data"),
            adc_bits: 10,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {what} listener on {addr}: {source}")]
    Bind {
        what: &'static str,
        addr: String,
        source: io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("runtime: {0}")]
    Runtime(#[from] io::Error),
}

/// Listeners bound and store recovered, not yet serving.
pub struct BoundServer {
    ingest: TcpListener,
    http: TcpListener,
    store: Arc<Store>,
    report: RecoveryReport,
}

pub async fn bind(config: &ServerConfig) -> Result<BoundServer, ServerError> {
    let (store, report) = Store::open(&config.data_dir, config.adc_bits)?;
    let ingest = TcpListener::bind(&config.listen)
        .await
        .map_err(|source| ServerError::Bind {
            what: "ingestion",
            addr: config.listen.clone(),
            source,
        })?;
    let http = TcpListener::bind(&config.http)
        .await
        .map_err(|source| ServerError::Bind {
            what: "http",
            addr: config.http.clone(),
            source,
        })?;
    Ok(BoundServer {
        ingest,
        http,
        store: Arc::new(store),
        report,
    })
}

impl BoundServer {
    pub fn ingest_addr(&self) -> SocketAddr {
        self.ingest
            .local_addr()
            .expect("bound listener has an address")
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http
            .local_addr()
            .expect("bound listener has an address")
    }

    pub fn store(&self) -> Arc<Store> {
        Arc::clone(&self.store)
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.report
    }

    /// Serves until `shutdown` resolves.
    pub async fn serve<F>(self, shutdown: F) -> io::Result<()>
    where
        F: Future<Output = ()> + Send + 'static,
    {
        let (stop_tx, stop_rx) = watch::channel(false);
        info!(
            "ingestion on {}, http on {}",
            self.ingest_addr(),
            self.http_addr()
        );
        let accept = tokio::spawn(accept_loop(self.ingest, Arc::clone(&self.store), stop_rx));
        let app = router(self.store);
        axum::serve(self.http, app)
            .with_graceful_shutdown(async move {
                shutdown.await;
                let _ = stop_tx.send(true);
            })
            .await?;
        let _ = accept.await;
        Ok(())
    }
}

async fn accept_loop(listener: TcpListener, store: Arc<Store>, mut stop: watch::Receiver<bool>) {
    let next_conn = AtomicU64::new(1);
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let conn_id = next_conn.fetch_add(1, Ordering::Relaxed);
                    tokio::spawn(handle_node(stream, peer, Arc::clone(&store), conn_id));
                }
                Err(e) => warn!("accept failed: {e}"),
            },
        }
    }
}

/// Serves one node connection: Hello gets an Ack, Telemetry is ingested.
async fn handle_node(mut stream: TcpStream, peer: SocketAddr, store: Arc<Store>, conn_id: u64) {
    let _ = stream.set_nodelay(true);
    let mut decoder = StreamDecoder::new();
    let mut buf = vec![0u8; 8192];
    let mut node: Option<u16> = None;
    'conn: loop {
        let n = match stream.read(&mut buf).await {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) => {
                debug!("connection {conn_id} from {peer}: {e}");
                break;
            }
        };
        decoder.push(&buf[..n]);
        let mut replies = Vec::new();
        let mut telemetry: Vec<Frame> = Vec::new();
        while let Some(item) = decoder.next_item() {
            match item {
                StreamItem::Frame(frame) => match frame.body {
                    FrameBody::Hello => {
                        if let Some(old) = store.open_session(frame.node_id, conn_id) {
                            info!(
                                "node {}: connection {conn_id} supersedes {old}",
                                frame.node_id
                            );
                        }
                        node = Some(frame.node_id);
                        let ack = Frame::ack(frame.node_id, frame.seq, now_epoch_ms());
                        wire::encode_into(&ack, store.adc_bits(), &mut replies)
                            .expect("ack encodes");
                    }
                    FrameBody::Telemetry(_) if node.is_none() => {
                        warn!("connection {conn_id} from {peer}: telemetry before hello, closing");
                        break 'conn;
                    }
                    FrameBody::Telemetry(_) => telemetry.push(frame),
                    FrameBody::Ack => debug!("connection {conn_id}: ignoring ack from node"),
                },
                StreamItem::Rejected(e) => debug!("connection {conn_id}: rejected frame: {e}"),
            }
        }
        if !telemetry.is_empty() {
            let received = now_epoch_ms();
            tokio::task::block_in_place(|| {
                for frame in &telemetry {
                    match store.ingest(frame, received) {
                        Ok((outcome, alert)) => {
                            debug!("node {} seq {}: {outcome:?}", frame.node_id, frame.seq);
                            if let Some(a) = alert {
                                info!(
                                    "node {} alert: {} -> {} at {:.2} ppm",
                                    a.node_id, a.from, a.to, a.ppm
                                );
                            }
                        }
                        Err(e) => warn!("{e}"),
                    }
                }
            });
        }
        if !replies.is_empty() && stream.write_all(&replies).await.is_err() {
            break;
        }
    }
    if decoder.skipped_bytes() > 0 || decoder.rejected_frames() > 0 {
        debug!(
            "connection {conn_id}: skipped {} bytes, rejected {} frames",
            decoder.skipped_bytes(),
            decoder.rejected_frames()
        );
    }
    if let Some(id) = node {
        store.close_session(id, conn_id);
    }
}

fn error(status: StatusCode, msg: &str) -> Response {
    (
        status,
        Json(ErrorJson {
            error: msg.to_owned(),
        }),
    )
        .into_response()
}

fn known_node(store: &Store, id: &str) -> Option<u16> {
    id.parse::<u16>().ok().filter(|&n| store.contains(n))
}

fn unknown_node() -> Response {
    error(StatusCode::NOT_FOUND, api::UNKNOWN_NODE)
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/nodes", get(list_nodes))
        .route("/nodes/{id}/latest", get(latest))
        .route("/nodes/{id}/range", get(range))
        .route("/nodes/{id}/alerts", get(alerts))
        .with_state(store)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_nodes(State(store): State<Arc<Store>>) -> Json<Vec<NodeJson>> {
    Json(
        store
            .nodes()
            .into_iter()
            .map(|n| NodeJson {
                node_id: n.node_id,
                last_seen_ms: n.last_seen_ms,
                record_count: n.record_count,
            })
            .collect(),
    )
}

async fn latest(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Response {
    let Some(node) = known_node(&store, &id) else {
        return unknown_node();
    };
    match store.latest(node) {
        Some(r) => Json(RecordJson::from(&r)).into_response(),
        None => unknown_node(),
    }
}

fn parse_bound(params: &HashMap<String, String>, key: &str, default: u64) -> Option<u64> {
    match params.get(key) {
        None => Some(default),
        Some(v) => v.parse().ok(),
    }
}

async fn range(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Response {
    let Some(node) = known_node(&store, &id) else {
        return unknown_node();
    };
    let (Some(from), Some(to)) = (
        parse_bound(&params, "from", 0),
        parse_bound(&params, "to", u64::MAX),
    ) else {
        return error(StatusCode::BAD_REQUEST, api::BAD_RANGE);
    };
    match store.range(node, from, to) {
        Ok(records) => Json(RangeJson {
            records: records.iter().map(RecordJson::from).collect(),
        })
        .into_response(),
        Err(_) => error(StatusCode::BAD_REQUEST, api::BAD_RANGE),
    }
}

async fn alerts(State(store): State<Arc<Store>>, Path(id): Path<String>) -> Response {
    let Some(node) = known_node(&store, &id) else {
        return unknown_node();
    };
    let alerts = store.alerts(node).unwrap_or_default();
    Json(AlertsJson {
        alerts: alerts.iter().map(AlertJson::from).collect(),
    })
    .into_response()
}

/// A server running on its own runtime thread, for embedding and tests.
pub struct ServerHandle {
    ingest_addr: SocketAddr,
    http_addr: SocketAddr,
    store: Arc<Store>,
    report: RecoveryReport,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn start(config: &ServerConfig) -> Result<Self, ServerError> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let bound = rt.block_on(bind(config))?;
        let ingest_addr = bound.ingest_addr();
        let http_addr = bound.http_addr();
        let store = bound.store();
        let report = bound.recovery().clone();
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("gasduino-server".into())
            .spawn(move || {
                if let Err(e) = rt.block_on(bound.serve(async {
                    let _ = rx.await;
                })) {
                    warn!("server stopped with error: {e}");
                }
                rt.shutdown_timeout(std::time::Duration::from_secs(1));
            })?;
        Ok(ServerHandle {
            ingest_addr,
            http_addr,
            store,
            report,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn ingest_addr(&self) -> SocketAddr {
        self.ingest_addr
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http_addr
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.report
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}
