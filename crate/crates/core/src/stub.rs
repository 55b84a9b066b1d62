//! A small scoring server speaking the remote-unit wire protocol, for tests
//! and local smoke runs.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use tokio::sync::oneshot;

use crate::seed::derive_seed;
use crate::unit::{format_order, WireRequest, WireResponse};

/// What the server sends back for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubReply {
    /// `{"order": <string>}` with status 200.
    Order(String),
    /// Arbitrary body with status 200.
    Body(String),
    /// Empty body with the given status.
    Status(u16),
}

pub type Responder = Arc<dyn Fn(&WireRequest) -> StubReply + Send + Sync>;

/// Orders slots by a hash of their docid: the same passage always gets the
/// same score, so answers are consistent across windows.
pub fn docid_score(docid: &str) -> u64 {
    derive_seed(0, &[b"stub", docid.as_bytes()])
}

pub fn consistent_order(req: &WireRequest) -> Vec<usize> {
    let mut slots: Vec<_> = req.slots.iter().collect();
    slots.sort_by_key(|s| (docid_score(&s.docid), s.identifier));
    slots.iter().map(|s| s.identifier).collect()
}

pub fn consistent_responder() -> Responder {
    Arc::new(|req| StubReply::Order(format_order(&consistent_order(req))))
}

async fn handle(State(responder): State<Responder>, Json(req): Json<WireRequest>) -> Response {
    match responder(&req) {
        StubReply::Order(order) => Json(WireResponse { order }).into_response(),
        StubReply::Body(body) => ([(header::CONTENT_TYPE, "application/json")], body).into_response(),
        StubReply::Status(code) => StatusCode::from_u16(code)
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
            .into_response(),
    }
}

/// Server running on a background thread; stops when dropped.
pub struct StubServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn spawn(responder: Responder) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", responder)
    }

    pub fn bind(addr: &str, responder: Responder) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_io()
            .build()?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = Router::new()
            .route("/", post(handle))
            .route("/rank", post(handle))
            .with_state(responder);
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with runtime");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        rx.await.ok();
                    })
                    .await
                    .ok();
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/rank", self.addr)
    }

    /// Blocks until the server thread exits (never, unless shut down).
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            t.join().ok();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            tx.send(()).ok();
        }
        if let Some(t) = self.thread.take() {
            t.join().ok();
        }
    }
}
