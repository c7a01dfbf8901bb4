use bytes::Bytes;

use crate::{
    CorrelationId, FunctionDescriptor, FunctionId, InvocationEnvelope, InvocationOutcome,
    MetricsSample, PlatformErrorKind, ProtocolError, WorkerId, MIB,
};

/// Largest frame (tag + payload) accepted in either direction.
pub const DEFAULT_MAX_FRAME: u64 = 80 * MIB;
/// Largest function binary carried in a descriptor.
pub const DEFAULT_MAX_WASM: u64 = 64 * MIB;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLimits {
    pub max_frame: u64,
    pub max_wasm: u64,
}

impl Default for FrameLimits {
    fn default() -> Self {
        FrameLimits { max_frame: DEFAULT_MAX_FRAME, max_wasm: DEFAULT_MAX_WASM }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    CreateBroadcast = 0x01,
    InvokeRequest = 0x02,
    InvokeResult = 0x03,
    NoCode = 0x04,
    InvokeWithCode = 0x05,
    Heartbeat = 0x06,
    DeleteBroadcast = 0x07,
    UpdateBroadcast = 0x08,
}

impl TryFrom<u8> for Tag {
    type Error = ProtocolError;

    fn try_from(b: u8) -> Result<Self, Self::Error> {
        Ok(match b {
            0x01 => Tag::CreateBroadcast,
            0x02 => Tag::InvokeRequest,
            0x03 => Tag::InvokeResult,
            0x04 => Tag::NoCode,
            0x05 => Tag::InvokeWithCode,
            0x06 => Tag::Heartbeat,
            0x07 => Tag::DeleteBroadcast,
            0x08 => Tag::UpdateBroadcast,
            other => return Err(ProtocolError::malformed(format!("unknown tag 0x{other:02x}"))),
        })
    }
}

/// Everything that travels on the Core <-> Worker stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    CreateBroadcast { descriptor: FunctionDescriptor },
    InvokeRequest { envelope: InvocationEnvelope },
    InvokeResult { correlation_id: CorrelationId, outcome: InvocationOutcome },
    NoCode { correlation_id: CorrelationId, function_id: FunctionId },
    InvokeWithCode { envelope: InvocationEnvelope, descriptor: FunctionDescriptor },
    Heartbeat { sample: MetricsSample },
    DeleteBroadcast { function_id: FunctionId },
    UpdateBroadcast { descriptor: FunctionDescriptor },
}

impl Message {
    pub fn tag(&self) -> Tag {
        match self {
            Message::CreateBroadcast { .. } => Tag::CreateBroadcast,
            Message::InvokeRequest { .. } => Tag::InvokeRequest,
            Message::InvokeResult { .. } => Tag::InvokeResult,
            Message::NoCode { .. } => Tag::NoCode,
            Message::InvokeWithCode { .. } => Tag::InvokeWithCode,
            Message::Heartbeat { .. } => Tag::Heartbeat,
            Message::DeleteBroadcast { .. } => Tag::DeleteBroadcast,
            Message::UpdateBroadcast { .. } => Tag::UpdateBroadcast,
        }
    }

    /// Correlation id of request/response messages.
    pub fn correlation_id(&self) -> Option<CorrelationId> {
        match self {
            Message::InvokeRequest { envelope } | Message::InvokeWithCode { envelope, .. } => {
                Some(envelope.correlation_id)
            }
            Message::InvokeResult { correlation_id, .. } | Message::NoCode { correlation_id, .. } => {
                Some(*correlation_id)
            }
            _ => None,
        }
    }

    fn descriptor(&self) -> Option<&FunctionDescriptor> {
        match self {
            Message::CreateBroadcast { descriptor }
            | Message::UpdateBroadcast { descriptor }
            | Message::InvokeWithCode { descriptor, .. } => Some(descriptor),
            _ => None,
        }
    }
}

pub fn encode_message(m: &Message) -> Result<Vec<u8>, ProtocolError> {
    encode_message_with(m, FrameLimits::default())
}

pub fn encode_message_with(m: &Message, limits: FrameLimits) -> Result<Vec<u8>, ProtocolError> {
    if let Some(d) = m.descriptor() {
        let len = d.wasm.len() as u64;
        if len > limits.max_wasm {
            return Err(ProtocolError::OversizeMessage { len, max: limits.max_wasm });
        }
    }
    let mut w = Writer(Vec::with_capacity(64));
    w.u32(0);
    w.u8(m.tag() as u8);
    match m {
        Message::CreateBroadcast { descriptor } | Message::UpdateBroadcast { descriptor } => {
            w.descriptor(descriptor)
        }
        Message::InvokeRequest { envelope } => w.envelope(envelope),
        Message::InvokeResult { correlation_id, outcome } => {
            w.raw(correlation_id.as_bytes());
            w.outcome(outcome);
        }
        Message::NoCode { correlation_id, function_id } => {
            w.raw(correlation_id.as_bytes());
            w.function_id(function_id);
        }
        Message::InvokeWithCode { envelope, descriptor } => {
            w.envelope(envelope);
            w.descriptor(descriptor);
        }
        Message::Heartbeat { sample } => {
            w.raw(sample.worker_id.as_bytes());
            w.u64(sample.free_memory_mb);
            w.u64(sample.in_flight);
            w.u64(sample.cache_bytes);
            w.u64(sample.taken_at);
        }
        Message::DeleteBroadcast { function_id } => w.function_id(function_id),
    }
    let mut buf = w.0;
    let n = (buf.len() - 4) as u64;
    if n > limits.max_frame {
        return Err(ProtocolError::OversizeMessage { len: n, max: limits.max_frame });
    }
    buf[..4].copy_from_slice(&(n as u32).to_be_bytes());
    Ok(buf)
}

/// Decodes exactly one complete frame. Truncation, unknown tags and
/// trailing bytes are all rejected.
pub fn decode_message(frame: &[u8]) -> Result<Message, ProtocolError> {
    if frame.len() < 5 {
        return Err(ProtocolError::malformed(format!("frame of {} bytes is too short", frame.len())));
    }
    let n = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    if n != frame.len() - 4 {
        return Err(ProtocolError::malformed(format!(
            "length prefix says {n} bytes, frame carries {}",
            frame.len() - 4
        )));
    }
    if n as u64 > DEFAULT_MAX_FRAME {
        return Err(ProtocolError::malformed(format!("frame of {n} bytes exceeds maximum")));
    }
    let tag = Tag::try_from(frame[4])?;
    let mut r = Reader { buf: &frame[5..], pos: 0 };
    let m = match tag {
        Tag::CreateBroadcast => Message::CreateBroadcast { descriptor: r.descriptor()? },
        Tag::UpdateBroadcast => Message::UpdateBroadcast { descriptor: r.descriptor()? },
        Tag::InvokeRequest => Message::InvokeRequest { envelope: r.envelope()? },
        Tag::InvokeResult => Message::InvokeResult {
            correlation_id: CorrelationId(r.array()?),
            outcome: r.outcome()?,
        },
        Tag::NoCode => Message::NoCode {
            correlation_id: CorrelationId(r.array()?),
            function_id: r.function_id()?,
        },
        Tag::InvokeWithCode => Message::InvokeWithCode {
            envelope: r.envelope()?,
            descriptor: r.descriptor()?,
        },
        Tag::Heartbeat => Message::Heartbeat {
            sample: MetricsSample {
                worker_id: WorkerId(r.array()?),
                free_memory_mb: r.u64()?,
                in_flight: r.u64()?,
                cache_bytes: r.u64()?,
                taken_at: r.u64()?,
            },
        },
        Tag::DeleteBroadcast => Message::DeleteBroadcast { function_id: r.function_id()? },
    };
    r.finish()?;
    Ok(m)
}

/// Canonical descriptor serialization, shared with the on-disk store format.
pub fn encode_descriptor(d: &FunctionDescriptor) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(d.wasm.len() + 64));
    w.descriptor(d);
    w.0
}

pub fn decode_descriptor(buf: &[u8]) -> Result<FunctionDescriptor, ProtocolError> {
    let mut r = Reader { buf, pos: 0 };
    let d = r.descriptor()?;
    r.finish()?;
    Ok(d)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }

    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.raw(b);
    }

    fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    fn function_id(&mut self, id: &FunctionId) {
        self.str(id.module());
        self.str(id.name());
    }

    fn descriptor(&mut self, d: &FunctionDescriptor) {
        self.function_id(&d.id);
        self.bytes(&d.wasm);
        self.u32(d.reserved_memory_mb);
        self.u64(d.created_at);
        self.u64(d.updated_at);
    }

    fn envelope(&mut self, e: &InvocationEnvelope) {
        self.raw(e.correlation_id.as_bytes());
        self.function_id(&e.function_id);
        self.str(&e.args);
        self.u64(e.deadline);
    }

    fn outcome(&mut self, o: &InvocationOutcome) {
        match o {
            InvocationOutcome::Ok { payload } => {
                self.u8(0);
                self.str(payload);
            }
            InvocationOutcome::FunctionError { message } => {
                self.u8(1);
                self.str(message);
            }
            InvocationOutcome::PlatformError { kind, message } => {
                self.u8(2);
                self.u8(kind.code());
                self.str(message);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ProtocolError::malformed("truncated payload"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ProtocolError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    fn bytes(&mut self) -> Result<&'a [u8], ProtocolError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, ProtocolError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| ProtocolError::malformed("string is not UTF-8"))
    }

    fn function_id(&mut self) -> Result<FunctionId, ProtocolError> {
        let module = self.string()?;
        let name = self.string()?;
        FunctionId::new(module, name).map_err(|e| ProtocolError::malformed(e.to_string()))
    }

    fn descriptor(&mut self) -> Result<FunctionDescriptor, ProtocolError> {
        let d = FunctionDescriptor {
            id: self.function_id()?,
            wasm: Bytes::copy_from_slice(self.bytes()?),
            reserved_memory_mb: self.u32()?,
            created_at: self.u64()?,
            updated_at: self.u64()?,
        };
        d.validate().map_err(|e| ProtocolError::malformed(e.to_string()))?;
        Ok(d)
    }

    fn envelope(&mut self) -> Result<InvocationEnvelope, ProtocolError> {
        Ok(InvocationEnvelope {
            correlation_id: CorrelationId(self.array()?),
            function_id: self.function_id()?,
            args: self.string()?,
            deadline: self.u64()?,
        })
    }

    fn outcome(&mut self) -> Result<InvocationOutcome, ProtocolError> {
        Ok(match self.u8()? {
            0 => InvocationOutcome::Ok { payload: self.string()? },
            1 => InvocationOutcome::FunctionError { message: self.string()? },
            2 => {
                let code = self.u8()?;
                let kind = PlatformErrorKind::from_code(code)
                    .ok_or_else(|| ProtocolError::malformed(format!("unknown error kind {code}")))?;
                InvocationOutcome::PlatformError { kind, message: self.string()? }
            }
            other => return Err(ProtocolError::malformed(format!("unknown outcome tag {other}"))),
        })
    }

    fn finish(&self) -> Result<(), ProtocolError> {
        if self.pos != self.buf.len() {
            return Err(ProtocolError::malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
