//! Shared vocabulary of the platform: identifiers, function descriptors,
//! invocation envelopes and outcomes, worker metrics, plus the binary frame
//! and discovery datagram codecs used on the Core <-> Worker link.
//!
//! All integers on the wire are big-endian; strings and byte strings are
//! prefixed with a `u32` length. A frame is
//!
//! ```text
//! +----------------+-----+---------------------+
//! | len: u32 (BE)  | tag | payload (len-1 B)   |
//! +----------------+-----+---------------------+
//! ```

#[cfg(feature = "arbitrary")]
pub mod arb;

mod announce;
mod clock;
mod codec;
mod error;
mod ids;
mod io;
mod types;

pub use announce::{decode_announce, encode_announce, DiscoveryAnnounce, ANNOUNCE_LEN, ANNOUNCE_MAGIC};
pub use clock::{Clock, ManualClock, SystemClock};
pub use codec::{
    decode_descriptor, decode_message, encode_descriptor, encode_message, encode_message_with,
    FrameLimits, Message, Tag, DEFAULT_MAX_FRAME, DEFAULT_MAX_WASM,
};
pub use error::ProtocolError;
pub use ids::{CorrelationId, FunctionId, WorkerId, MAX_NAME_LEN};
pub use io::{read_frame, write_frame};
pub use types::{
    now_ms, FunctionDescriptor, InvocationEnvelope, InvocationOutcome, MetricsSample,
    PlatformErrorKind, WASM_PREAMBLE,
};

pub const MIB: u64 = 1 << 20;
