//! Local HTTP target for the network benchmarks: GET answers a fixed body,
//! POST echoes the request body. Every response carries the server time.

use std::net::SocketAddr;
use std::thread;

use axum::body::Bytes;
use axum::http::HeaderValue;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use fl_protocol::now_ms;
use tokio::sync::oneshot;

pub const GET_BODY: &str = "ok";
pub const TIMESTAMP_HEADER: &str = "x-server-timestamp";

fn stamped(body: impl IntoResponse) -> Response {
    let mut r = body.into_response();
    if let Ok(v) = HeaderValue::from_str(&now_ms().to_string()) {
        r.headers_mut().insert(TIMESTAMP_HEADER, v);
    }
    r
}

pub fn router() -> Router {
    Router::new().fallback(get(|| async { stamped(GET_BODY) }).post(|body: Bytes| async move { stamped(body) }))
}

/// Echo server on its own thread. Stops when dropped.
pub struct EchoServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl EchoServer {
    pub fn start(bind: SocketAddr) -> std::io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(bind))?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = thread::spawn(move || {
            rt.block_on(async move {
                let _ = axum::serve(listener, router())
                    .with_graceful_shutdown(async move {
                        let _ = stopped.await;
                    })
                    .await;
            });
        });
        Ok(EchoServer { addr, stop: Some(stop), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }
}

impl Drop for EchoServer {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
