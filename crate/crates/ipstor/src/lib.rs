//! A miniature IP-storage stack.
//!
//! The crate implements a small but complete block-storage-over-IP
//! protocol: a PDU codec ([`pdu`]), pluggable transport security with
//! three modes ([`channel`]), a storage target ([`target`]) and initiator
//! ([`initiator`]), a frame capture and analyzer ([`trace`]), and an
//! experiment driver that measures what each security mode costs
//! ([`bench`]).
//!
//! Two transports carry the same byte streams: a deterministic simulated
//! link with a virtual clock, modeled bandwidth/delay, and modeled crypto
//! costs — identical inputs give byte-identical traces — and a real
//! loopback TCP transport behind the same interface.

pub mod bench;
pub mod channel;
pub mod error;
pub mod initiator;
pub mod pdu;
pub mod target;
pub mod trace;

pub use error::{Error, Result};
