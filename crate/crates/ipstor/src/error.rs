//! Crate-wide error type.
//!
//! One enum covers every layer so that errors cross module boundaries without
//! wrapper noise: codec framing, channel security, transport, target storage,
//! and trace analysis all share it.

/// A specialized [`Result`](std::result::Result) using the crate error.
pub type Result<T> = std::result::Result<T, Error>;

/// The error type used throughout the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Not enough bytes yet to finish decoding; `needed` is the minimum
    /// number of additional bytes required.
    #[error("incomplete input: {needed} more bytes needed")]
    Incomplete { needed: usize },

    /// The peer violated the wire protocol (bad opcode, bad framing, bad
    /// phase, inconsistent lengths, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Authenticated decryption failed: the data was tampered with or the
    /// peers do not share the same keys.
    #[error("integrity check failed: {0}")]
    Integrity(String),

    /// An encrypted packet replayed an already-seen sequence number.
    #[error("replayed packet: sequence {seq} is not above {last}")]
    Replay { seq: u64, last: u64 },

    /// The in-band key agreement failed (malformed message or bad
    /// confirmation code).
    #[error("handshake failed: {0}")]
    Handshake(String),

    /// Login authentication was rejected.
    #[error("authentication failed: {0}")]
    Auth(String),

    /// The byte transport failed (connection refused, closed, simulated
    /// link deadlock, ...).
    #[error("transport error: {0}")]
    Transport(String),

    /// The target completed a SCSI command with a non-GOOD status.
    #[error("scsi status {status:#04x}: {detail}")]
    Scsi { status: u8, detail: String },

    /// A trace analysis precondition failed (empty input where data is
    /// required, duplicate task tags in flight, mismatched workloads, ...).
    #[error("analysis error: {0}")]
    Analysis(String),

    /// The target could not start (bad config, unbindable address, ...).
    #[error("startup error: {0}")]
    Startup(String),

    /// An operating-system I/O error.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand constructor for [`Error::Protocol`].
    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    /// Shorthand constructor for [`Error::InvalidArgument`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
