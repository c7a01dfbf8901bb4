use crate::{ProtocolError, WorkerId};

pub const ANNOUNCE_MAGIC: [u8; 4] = *b"FLSS";
const MAX_ADDR: usize = 253;

/// Fixed datagram length: magic, worker id, capacity, epoch, address length,
/// and a zero-padded 253-byte address field.
pub const ANNOUNCE_LEN: usize = 4 + 16 + 4 + 8 + 1 + MAX_ADDR;

/// Worker presence beacon. Also written once by a worker at the start of
/// every accepted Core connection so the Core learns who it dialed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscoveryAnnounce {
    pub worker_id: WorkerId,
    /// `host:port` the worker accepts Core connections on.
    pub listen_address: String,
    pub capacity_mb: u32,
    pub epoch: u64,
}

pub fn encode_announce(a: &DiscoveryAnnounce) -> Result<[u8; ANNOUNCE_LEN], ProtocolError> {
    let addr = a.listen_address.as_bytes();
    if addr.len() > MAX_ADDR {
        return Err(ProtocolError::AddressTooLong(addr.len()));
    }
    let mut out = [0u8; ANNOUNCE_LEN];
    out[..4].copy_from_slice(&ANNOUNCE_MAGIC);
    out[4..20].copy_from_slice(a.worker_id.as_bytes());
    out[20..24].copy_from_slice(&a.capacity_mb.to_be_bytes());
    out[24..32].copy_from_slice(&a.epoch.to_be_bytes());
    out[32] = addr.len() as u8;
    out[33..33 + addr.len()].copy_from_slice(addr);
    Ok(out)
}

pub fn decode_announce(buf: &[u8]) -> Result<DiscoveryAnnounce, ProtocolError> {
    if buf.len() != ANNOUNCE_LEN {
        return Err(ProtocolError::malformed(format!(
            "announce must be {ANNOUNCE_LEN} bytes, got {}",
            buf.len()
        )));
    }
    if buf[..4] != ANNOUNCE_MAGIC {
        return Err(ProtocolError::malformed("bad announce magic"));
    }
    let addr_len = usize::from(buf[32]);
    if addr_len > MAX_ADDR {
        return Err(ProtocolError::malformed("announce address length out of range"));
    }
    if buf[33 + addr_len..].iter().any(|&b| b != 0) {
        return Err(ProtocolError::malformed("non-zero announce padding"));
    }
    let listen_address = std::str::from_utf8(&buf[33..33 + addr_len])
        .map_err(|_| ProtocolError::malformed("announce address is not UTF-8"))?
        .to_owned();
    let capacity_mb = u32::from_be_bytes(buf[20..24].try_into().unwrap());
    if capacity_mb == 0 {
        return Err(ProtocolError::malformed("announce capacity is zero"));
    }
    Ok(DiscoveryAnnounce {
        worker_id: WorkerId(buf[4..20].try_into().unwrap()),
        listen_address,
        capacity_mb,
        epoch: u64::from_be_bytes(buf[24..32].try_into().unwrap()),
    })
}
