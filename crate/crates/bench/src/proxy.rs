//! Frame-aware TCP proxy that drops a fraction of protocol frames, for
//! exercising at-most-once delivery between the Core and a worker.
//!
//! The worker's fixed-size handshake is always forwarded; after that every
//! frame in either direction is independently dropped with probability
//! `drop_rate`, decided by a seeded generator.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use fl_protocol::{read_frame, write_frame, ANNOUNCE_LEN};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tracing::{debug, warn};

#[derive(Debug, Default)]
pub struct ProxyStats {
    pub forwarded: AtomicU64,
    pub dropped: AtomicU64,
    pub connections: AtomicU64,
}

pub struct FaultProxy {
    pub addr: SocketAddr,
    pub stats: Arc<ProxyStats>,
    task: JoinHandle<()>,
}

impl Drop for FaultProxy {
    fn drop(&mut self) {
        self.task.abort();
    }
}

impl FaultProxy {
    /// Starts proxying `listen` to `upstream` on the current tokio runtime.
    pub async fn start(listen: SocketAddr, upstream: String, drop_rate: f64, seed: u64) -> std::io::Result<Self> {
        let listener = TcpListener::bind(listen).await?;
        let addr = listener.local_addr()?;
        let stats = Arc::new(ProxyStats::default());
        let rng = Arc::new(Mutex::new(StdRng::seed_from_u64(seed)));
        let task_stats = stats.clone();
        let task = tokio::spawn(async move {
            loop {
                let Ok((client, _)) = listener.accept().await else { continue };
                task_stats.connections.fetch_add(1, Ordering::Relaxed);
                let upstream = upstream.clone();
                let stats = task_stats.clone();
                let rng = rng.clone();
                tokio::spawn(async move {
                    if let Err(e) = session(client, &upstream, drop_rate, rng, stats).await {
                        debug!(error = %e, "proxy session ended");
                    }
                });
            }
        });
        Ok(FaultProxy { addr, stats, task })
    }

    pub fn dropped(&self) -> u64 {
        self.stats.dropped.load(Ordering::Relaxed)
    }

    pub fn forwarded(&self) -> u64 {
        self.stats.forwarded.load(Ordering::Relaxed)
    }
}

async fn session(
    client: TcpStream,
    upstream: &str,
    drop_rate: f64,
    rng: Arc<Mutex<StdRng>>,
    stats: Arc<ProxyStats>,
) -> std::io::Result<()> {
    let server = TcpStream::connect(upstream).await?;
    client.set_nodelay(true)?;
    server.set_nodelay(true)?;
    let (mut c_rd, mut c_wr) = client.into_split();
    let (mut s_rd, mut s_wr) = server.into_split();

    let mut hello = [0u8; ANNOUNCE_LEN];
    s_rd.read_exact(&mut hello).await?;
    c_wr.write_all(&hello).await?;

    let down = pump(&mut s_rd, &mut c_wr, drop_rate, rng.clone(), stats.clone());
    let up = pump(&mut c_rd, &mut s_wr, drop_rate, rng, stats);
    tokio::select! {
        r = down => r,
        r = up => r,
    }
}

async fn pump<R, W>(
    rd: &mut R,
    wr: &mut W,
    drop_rate: f64,
    rng: Arc<Mutex<StdRng>>,
    stats: Arc<ProxyStats>,
) -> std::io::Result<()>
where
    R: AsyncRead + Unpin,
    W: AsyncWrite + Unpin,
{
    while let Some(frame) = read_frame(rd).await? {
        let drop = rng.lock().unwrap().random_bool(drop_rate);
        if drop {
            stats.dropped.fetch_add(1, Ordering::Relaxed);
            continue;
        }
        stats.forwarded.fetch_add(1, Ordering::Relaxed);
        if let Err(e) = write_frame(wr, &frame).await {
            warn!(error = %e, "proxy write failed");
            return Err(e);
        }
    }
    Ok(())
}
