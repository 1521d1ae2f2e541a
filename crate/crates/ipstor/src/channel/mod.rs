//! Transport channels.
//!
//! A channel moves opaque byte streams between initiator and target under
//! one of three security modes, over either a deterministic simulated link
//! ([`mem`]) or a real loopback socket ([`tcp`]). Everything mode-specific
//! (sealing, opening, handshakes, packetization) lives in [`pipeline`] and
//! is shared by both transports.

pub mod crypto;
pub mod esp;
pub mod mem;
pub mod overhead;
pub mod packet;
pub mod pipeline;
pub mod record;
pub mod tcp;

use std::fmt;
use std::net::Ipv4Addr;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::trace::RowId;

pub use packet::Endpoint;

/// Default path MTU.
pub const DEFAULT_MTU: usize = 1500;

/// Built-in development pre-shared key (32 bytes). Production deployments
/// override it via config or the `IPSTOR_PSK` environment variable.
pub const DEFAULT_PSK: [u8; 32] = *b"ipstor-development-psk-32bytes!!";

/// Simulated initiator address; the port varies per connection.
pub const MEM_INITIATOR_BASE_PORT: u16 = 50387;

/// Endpoint of the simulated initiator host.
pub fn mem_initiator_endpoint(port: u16) -> Endpoint {
    Endpoint::new(Ipv4Addr::new(192, 168, 2, 2), port)
}

/// Endpoint of the simulated target host.
pub fn mem_target_endpoint() -> Endpoint {
    Endpoint::new(Ipv4Addr::new(192, 168, 2, 1), 3260)
}

/// How the byte stream is protected on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SecurityMode {
    /// Bare pseudo-TCP: no confidentiality, no integrity, no handshake.
    Plain,
    /// Stream records sealed above the transport (SSL-style): a keyed
    /// handshake, then AEAD-framed records that are packetized like any
    /// other stream.
    RecordLayer,
    /// Per-packet sealing below the transport (IPsec-ESP-style): every
    /// datagram is individually encrypted, authenticated, and
    /// replay-protected, keyed from the pre-shared key with no handshake.
    PacketLayer,
}

impl SecurityMode {
    /// The short CLI token for this mode.
    pub fn token(self) -> &'static str {
        match self {
            SecurityMode::Plain => "plain",
            SecurityMode::RecordLayer => "ssl",
            SecurityMode::PacketLayer => "ipsec",
        }
    }

    pub fn from_token(s: &str) -> Result<SecurityMode> {
        match s {
            "plain" => Ok(SecurityMode::Plain),
            "ssl" => Ok(SecurityMode::RecordLayer),
            "ipsec" => Ok(SecurityMode::PacketLayer),
            other => Err(Error::invalid(format!(
                "unknown security mode {other:?} (expected plain, ssl, or ipsec)"
            ))),
        }
    }

    /// All modes, in presentation order.
    pub fn all() -> [SecurityMode; 3] {
        [
            SecurityMode::Plain,
            SecurityMode::RecordLayer,
            SecurityMode::PacketLayer,
        ]
    }
}

impl fmt::Display for SecurityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Link characteristics for the simulated transport. The TCP transport
/// only honors `mtu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub one_way_delay_ns: u64,
    /// Bits per second; `None` means serialization takes no time.
    pub bandwidth_bps: Option<f64>,
    pub mtu: usize,
}

impl Default for LinkParams {
    fn default() -> LinkParams {
        LinkParams {
            one_way_delay_ns: 1_000_000,
            bandwidth_bps: Some(1e9),
            mtu: DEFAULT_MTU,
        }
    }
}

impl LinkParams {
    /// The link echo recorded in run summaries.
    pub fn echo(&self) -> crate::trace::LinkEcho {
        crate::trace::LinkEcho {
            one_way_delay_ns: self.one_way_delay_ns,
            bandwidth_bps: self.bandwidth_bps,
            mtu: self.mtu as u64,
        }
    }
}

/// Modeled cost of sealing or opening one protected unit (a record or a
/// datagram) carrying `payload` application bytes. Plain traffic has no
/// protected units, so it is never charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CryptoCostModel {
    pub per_unit_ns: u64,
    pub per_byte_ns: u64,
}

impl CryptoCostModel {
    pub fn cost(&self, payload: usize) -> u64 {
        self.per_unit_ns + self.per_byte_ns * payload as u64
    }
}

/// Bytes delivered by one `recv_some` call, stamped with the delivery time
/// and the trace rows (with application-byte ranges) that carried them.
/// Stream offsets in `row_spans` count application bytes from the start of
/// the connection, one coordinate space per direction.
pub struct RxChunk {
    pub bytes: Vec<u8>,
    pub time_ns: u64,
    pub row_spans: Vec<(RowId, Vec<Range<u64>>)>,
}

/// An established initiator-side byte stream.
///
/// `send` returns the trace rows its packets produced together with the
/// application-byte ranges each carries, so callers can attribute payload
/// to wire frames after the fact.
pub trait ByteChannel {
    /// Runs any security handshake. Must be called before `send`;
    /// idempotent.
    fn handshake(&mut self) -> Result<()>;
    fn send(&mut self, data: &[u8]) -> Result<Vec<(RowId, Vec<Range<u64>>)>>;
    /// Blocks (or advances virtual time) until something arrives.
    fn recv_some(&mut self) -> Result<RxChunk>;
    /// Nanoseconds since this connection's epoch.
    fn now_ns(&self) -> u64;
    fn local(&self) -> Endpoint;
    fn peer(&self) -> Endpoint;
    fn close(&mut self) -> Result<()>;
}
