//! TCP session with the Core, discovery announces, periodic tasks and the
//! metrics endpoint.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::extract::State;
use axum::routing::get;
use axum::{Json, Router};
use fl_protocol::{
    decode_message, encode_announce, encode_message, read_frame, write_frame, DiscoveryAnnounce, FunctionDescriptor,
    FunctionId, Message,
};
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream, UdpSocket};
use tokio::sync::{mpsc, watch, Mutex};
use tokio::task::{JoinHandle, JoinSet};
use tracing::{debug, info, warn};

use crate::config::{Identity, WorkerConfig};
use crate::engine::Runtime;
use crate::service::WorkerService;

/// A running worker. Dropping the handle stops it.
pub struct WorkerHandle<R: Runtime> {
    pub service: Arc<WorkerService<R>>,
    pub listen_addr: SocketAddr,
    pub metrics_addr: Option<SocketAddr>,
    pub announce: DiscoveryAnnounce,
    tasks: JoinSet<()>,
    session: Arc<Mutex<Option<JoinHandle<()>>>>,
}

impl<R: Runtime> WorkerHandle<R> {
    /// Closes the current Core session, if any, without stopping the worker.
    pub async fn drop_session(&self) {
        if let Some(h) = self.session.lock().await.take() {
            h.abort();
        }
    }

    pub async fn shutdown(mut self) {
        self.drop_session().await;
        self.tasks.shutdown().await;
    }
}

impl<R: Runtime> Drop for WorkerHandle<R> {
    fn drop(&mut self) {
        self.tasks.abort_all();
        if let Ok(mut s) = self.session.try_lock() {
            if let Some(h) = s.take() {
                h.abort();
            }
        }
    }
}

fn advertised(cfg: &WorkerConfig, bound: SocketAddr) -> String {
    if let Some(a) = &cfg.advertise {
        return a.clone();
    }
    let ip = if bound.ip().is_unspecified() { IpAddr::V4(Ipv4Addr::LOCALHOST) } else { bound.ip() };
    SocketAddr::new(ip, bound.port()).to_string()
}

/// Binds listeners and spawns all worker tasks.
pub async fn start<R: Runtime>(
    cfg: &WorkerConfig,
    identity: Identity,
    service: Arc<WorkerService<R>>,
) -> anyhow::Result<WorkerHandle<R>> {
    let listener = TcpListener::bind(cfg.listen).await.with_context(|| format!("binding {}", cfg.listen))?;
    let listen_addr = listener.local_addr()?;
    let announce = DiscoveryAnnounce {
        worker_id: identity.worker_id,
        listen_address: advertised(cfg, listen_addr),
        capacity_mb: cfg.capacity_mb,
        epoch: identity.epoch,
    };
    let announce_bytes = encode_announce(&announce).context("encoding announce")?;

    let mut tasks = JoinSet::new();
    let metrics_addr = match cfg.metrics_listen {
        Some(addr) => {
            let l = TcpListener::bind(addr).await.with_context(|| format!("binding metrics {addr}"))?;
            let bound = l.local_addr()?;
            let app = metrics_router(service.clone());
            tasks.spawn(async move {
                if let Err(e) = axum::serve(l, app).await {
                    warn!(error = %e, "metrics server stopped");
                }
            });
            Some(bound)
        }
        None => None,
    };

    let (connected_tx, connected_rx) = watch::channel(false);
    let connected_tx = Arc::new(connected_tx);
    let session: Arc<Mutex<Option<JoinHandle<()>>>> = Arc::new(Mutex::new(None));

    tasks.spawn(announce_loop(cfg.clone(), announce_bytes, connected_rx));
    tasks.spawn(sweep_loop(service.clone(), Duration::from_millis(cfg.sweep_period_ms)));
    {
        let service = service.clone();
        let session = session.clone();
        let heartbeat = Duration::from_millis(cfg.metrics_period_ms);
        tasks.spawn(async move {
            loop {
                let (stream, peer) = match listener.accept().await {
                    Ok(v) => v,
                    Err(e) => {
                        warn!(error = %e, "accept failed");
                        tokio::time::sleep(Duration::from_millis(100)).await;
                        continue;
                    }
                };
                info!(%peer, "core connected");
                let _ = stream.set_nodelay(true);
                let service = service.clone();
                let connected = connected_tx.clone();
                let handle = tokio::spawn(async move {
                    connected.send_replace(true);
                    if let Err(e) = run_session(stream, service, announce_bytes, heartbeat).await {
                        debug!(error = %e, "session ended");
                    }
                    info!(%peer, "core disconnected");
                    connected.send_replace(false);
                });
                // One Core at a time: a new connection supersedes the old.
                if let Some(old) = session.lock().await.replace(handle) {
                    old.abort();
                }
            }
        });
    }
    info!(worker_id = %identity.worker_id, epoch = identity.epoch, %listen_addr, "worker listening");
    Ok(WorkerHandle { service, listen_addr, metrics_addr, announce, tasks, session })
}

async fn run_session<R: Runtime>(
    stream: TcpStream,
    service: Arc<WorkerService<R>>,
    announce: [u8; fl_protocol::ANNOUNCE_LEN],
    heartbeat: Duration,
) -> anyhow::Result<()> {
    let (mut rd, mut wr) = stream.into_split();
    wr.write_all(&announce).await?;

    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Message>();
    let mut session_tasks = JoinSet::new();
    session_tasks.spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            let frame = match encode_message(&msg) {
                Ok(f) => f,
                Err(e) => {
                    warn!(error = %e, "dropping unencodable message");
                    continue;
                }
            };
            if write_frame(&mut wr, &frame).await.is_err() {
                break;
            }
        }
    });
    {
        let service = service.clone();
        let tx = out_tx.clone();
        session_tasks.spawn(async move {
            let mut tick = tokio::time::interval(heartbeat);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tick.tick().await;
                if tx.send(Message::Heartbeat { sample: service.sample() }).is_err() {
                    break;
                }
            }
        });
    }
    // Broadcasts are applied in arrival order on a single blocking lane.
    let (bc_tx, mut bc_rx) = mpsc::unbounded_channel::<Broadcast>();
    {
        let service = service.clone();
        session_tasks.spawn(async move {
            while let Some(b) = bc_rx.recv().await {
                let service = service.clone();
                let _ = tokio::task::spawn_blocking(move || match b {
                    Broadcast::Create(d) => service.handle_create_broadcast(&d),
                    Broadcast::Update(d) => service.handle_update_broadcast(&d),
                    Broadcast::Delete(id) => service.handle_delete_broadcast(&id),
                })
                .await;
            }
        });
    }

    let result = loop {
        let frame = match read_frame(&mut rd).await {
            Ok(Some(f)) => f,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e.into()),
        };
        let msg = match decode_message(&frame) {
            Ok(m) => m,
            Err(e) => break Err(anyhow::anyhow!("bad frame from core: {e}")),
        };
        match msg {
            Message::CreateBroadcast { descriptor } => {
                let _ = bc_tx.send(Broadcast::Create(descriptor));
            }
            Message::UpdateBroadcast { descriptor } => {
                let _ = bc_tx.send(Broadcast::Update(descriptor));
            }
            Message::DeleteBroadcast { function_id } => {
                let _ = bc_tx.send(Broadcast::Delete(function_id));
            }
            Message::InvokeRequest { envelope } => {
                let service = service.clone();
                let tx = out_tx.clone();
                tokio::spawn(async move {
                    if let Some(reply) = service.handle_invoke(envelope).await {
                        let _ = tx.send(reply);
                    }
                });
            }
            Message::InvokeWithCode { envelope, descriptor } => {
                let service = service.clone();
                let tx = out_tx.clone();
                tokio::spawn(async move {
                    if let Some(reply) = service.handle_invoke_with_code(envelope, descriptor).await {
                        let _ = tx.send(reply);
                    }
                });
            }
            other => warn!(tag = ?other.tag(), "unexpected message from core"),
        }
    };
    session_tasks.abort_all();
    result
}

enum Broadcast {
    Create(FunctionDescriptor),
    Update(FunctionDescriptor),
    Delete(FunctionId),
}

async fn announce_loop(cfg: WorkerConfig, announce: [u8; fl_protocol::ANNOUNCE_LEN], mut connected: watch::Receiver<bool>) {
    let socket = match UdpSocket::bind((Ipv4Addr::UNSPECIFIED, 0)).await {
        Ok(s) => s,
        Err(e) => {
            warn!(error = %e, "announce socket unavailable; discovery disabled");
            return;
        }
    };
    let _ = socket.set_multicast_ttl_v4(1);
    let _ = socket.set_multicast_loop_v4(true);
    loop {
        if cfg.multicast {
            if let Err(e) = socket.send_to(&announce, cfg.multicast_group).await {
                debug!(error = %e, "multicast announce failed");
            }
        }
        if let Some(core) = &cfg.core_address {
            if let Err(e) = socket.send_to(&announce, core.as_str()).await {
                debug!(error = %e, %core, "unicast announce failed");
            }
        }
        let period = if *connected.borrow() { cfg.beacon_period_ms } else { cfg.announce_period_ms };
        tokio::select! {
            _ = tokio::time::sleep(Duration::from_millis(period)) => {}
            changed = connected.changed() => {
                if changed.is_err() {
                    return;
                }
            }
        }
    }
}

async fn sweep_loop<R: Runtime>(service: Arc<WorkerService<R>>, period: Duration) {
    let mut tick = tokio::time::interval(period);
    tick.tick().await;
    loop {
        tick.tick().await;
        let evicted = service.ttl_sweep();
        if !evicted.is_empty() {
            info!(count = evicted.len(), "evicted idle modules");
        }
    }
}

fn metrics_router<R: Runtime>(service: Arc<WorkerService<R>>) -> Router {
    Router::new()
        .route("/metrics", get(metrics::<R>))
        .route("/executions", get(executions::<R>))
        .with_state(service)
}

async fn metrics<R: Runtime>(State(service): State<Arc<WorkerService<R>>>) -> String {
    service.metrics_text()
}

async fn executions<R: Runtime>(
    State(service): State<Arc<WorkerService<R>>>,
) -> Json<std::collections::HashMap<String, u32>> {
    Json(service.executions().into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}
