//! Worker connections and discovery.

use std::collections::HashSet;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use fl_protocol::{decode_announce, decode_message, encode_message, read_frame, write_frame, WorkerId, ANNOUNCE_LEN};
use tokio::io::AsyncReadExt;
use tokio::net::{TcpStream, UdpSocket};
use tokio::sync::mpsc;
use tracing::{debug, info, warn};

use crate::controller::{Core, CoreError};

/// Dials a worker, performs the handshake and starts the connection tasks.
pub async fn dial(core: &Arc<Core>, address: &str, timeout: Duration) -> Result<WorkerId, CoreError> {
    let connect = async {
        let mut stream = TcpStream::connect(address).await?;
        stream.set_nodelay(true)?;
        let mut hello = [0u8; ANNOUNCE_LEN];
        stream.read_exact(&mut hello).await?;
        Ok::<_, std::io::Error>((stream, hello))
    };
    let (stream, hello) = tokio::time::timeout(timeout, connect)
        .await
        .map_err(|_| CoreError::Connect(format!("{address}: timed out")))?
        .map_err(|e| CoreError::Connect(format!("{address}: {e}")))?;
    let announce = decode_announce(&hello).map_err(|e| CoreError::Connect(format!("{address}: bad handshake: {e}")))?;
    let worker = announce.worker_id;

    let conn = core.next_conn_id();
    let (tx, mut rx) = mpsc::unbounded_channel();
    let (mut rd, mut wr) = stream.into_split();
    core.attach(&announce, address.to_string(), conn, tx);

    tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            match encode_message(&msg) {
                Ok(frame) => {
                    if write_frame(&mut wr, &frame).await.is_err() {
                        break;
                    }
                }
                Err(e) => warn!(error = %e, "dropping unencodable message"),
            }
        }
    });
    let reader_core = core.clone();
    let reader = tokio::spawn(async move {
        loop {
            let frame = match read_frame(&mut rd).await {
                Ok(Some(f)) => f,
                Ok(None) => break,
                Err(e) => {
                    debug!(%worker, error = %e, "read failed");
                    break;
                }
            };
            match decode_message(&frame) {
                Ok(msg) => reader_core.on_message(worker, conn, msg),
                Err(e) => {
                    warn!(%worker, error = %e, "malformed frame; closing connection");
                    break;
                }
            }
        }
        reader_core.detach(&worker, conn);
    });
    core.set_reader(&worker, conn, reader.abort_handle());
    info!(%worker, %address, "connected to worker");
    Ok(worker)
}

/// Tracks dials in progress so announces do not trigger duplicates.
#[derive(Default)]
struct Dialing(Mutex<HashSet<String>>);

impl Dialing {
    fn begin(&self, address: &str) -> bool {
        self.0.lock().unwrap().insert(address.to_string())
    }

    fn end(&self, address: &str) {
        self.0.lock().unwrap().remove(address);
    }
}

/// Binds the discovery socket, joining the multicast group when requested.
pub async fn bind_discovery(listen: SocketAddr, group: Option<SocketAddr>) -> std::io::Result<UdpSocket> {
    let socket = socket2::Socket::new(socket2::Domain::IPV4, socket2::Type::DGRAM, Some(socket2::Protocol::UDP))?;
    socket.set_reuse_address(true)?;
    socket.set_nonblocking(true)?;
    socket.bind(&listen.into())?;
    if let Some(SocketAddr::V4(g)) = group {
        if let Err(e) = socket.join_multicast_v4(g.ip(), &Ipv4Addr::UNSPECIFIED) {
            warn!(group = %g, error = %e, "cannot join multicast group; only unicast announces will be seen");
        }
    }
    UdpSocket::from_std(socket.into())
}

/// Receives announces and connects to new or restarted workers.
pub async fn discovery_loop(core: Arc<Core>, socket: UdpSocket, connect_timeout: Duration) {
    let dialing = Arc::new(Dialing::default());
    let mut buf = [0u8; 1024];
    loop {
        let (n, from) = match socket.recv_from(&mut buf).await {
            Ok(v) => v,
            Err(e) => {
                warn!(error = %e, "discovery receive failed");
                tokio::time::sleep(Duration::from_millis(100)).await;
                continue;
            }
        };
        let announce = match decode_announce(&buf[..n]) {
            Ok(a) => a,
            Err(e) => {
                debug!(%from, error = %e, "ignoring datagram");
                continue;
            }
        };
        if core.is_connected(&announce.worker_id, announce.epoch) {
            continue;
        }
        let address = announce.listen_address.clone();
        if !dialing.begin(&address) {
            continue;
        }
        let core = core.clone();
        let dialing = dialing.clone();
        tokio::spawn(async move {
            match dial(&core, &address, connect_timeout).await {
                Ok(worker) => debug!(%worker, "discovered"),
                Err(e) => warn!(error = %e, "announce ignored"),
            }
            dialing.end(&address);
        });
    }
}

/// Keeps statically configured workers connected.
pub async fn static_workers_loop(core: Arc<Core>, addresses: Vec<String>, period: Duration, connect_timeout: Duration) {
    loop {
        for address in &addresses {
            if core.is_address_connected(address) {
                continue;
            }
            if let Err(e) = dial(&core, address, connect_timeout).await {
                debug!(error = %e, "static worker unreachable");
            }
        }
        tokio::time::sleep(period).await;
    }
}
