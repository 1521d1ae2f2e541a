//! Closed-form wire-size accounting for each security mode.
//!
//! These functions predict, without running any transport, exactly how many
//! bytes appear on the link when an application stream of a given size is
//! carried by a given mode. The sealer/packetizer implementations are tested
//! against these formulas, so they double as an independent oracle.

use super::esp::{esp_wire_len, ESP_FIXED_OVERHEAD, ESP_PAD_BLOCK};
use super::packet::{PLAIN_OVERHEAD, TCP_HEADER_LEN};
use super::record::{RECORD_MAX_PLAINTEXT, RECORD_OVERHEAD};
use super::SecurityMode;

/// Plaintext sizes of the four record-layer handshake messages, in flight
/// order: client hello, server hello, client confirm, server confirm.
pub const HANDSHAKE_MSG_SIZES: [usize; 4] = [64, 128, 80, 48];

/// Bytes a plain packetized stream of `app_bytes` occupies on the wire.
///
/// Each packet carries at most `mtu - 40` payload bytes under 40 bytes of
/// IP+TCP header. Zero application bytes produce zero packets.
fn plain_wire_bytes(app_bytes: usize, mtu: usize) -> usize {
    if app_bytes == 0 {
        return 0;
    }
    let per_packet = mtu - PLAIN_OVERHEAD;
    let packets = app_bytes.div_ceil(per_packet);
    app_bytes + packets * PLAIN_OVERHEAD
}

/// Bytes on the wire for `app_bytes` of application stream under `mode`.
///
/// - `Plain`: the stream is chunked into MTU-sized segments, 40 bytes of
///   header each.
/// - `RecordLayer`: the stream is first framed into records of at most
///   16 384 plaintext bytes, each adding 21 bytes (5-byte header plus 16-byte
///   tag); the resulting record stream is then carried like a plain stream.
/// - `PacketLayer`: the stream is chunked to the per-packet capacity, and each
///   chunk is sealed into an ESP datagram with a 60-byte fixed overhead plus
///   pad-to-16 expansion of the inner TCP header, payload, and 2-byte trailer.
pub fn wire_bytes(mode: SecurityMode, app_bytes: usize, mtu: usize) -> usize {
    match mode {
        SecurityMode::Plain => plain_wire_bytes(app_bytes, mtu),
        SecurityMode::RecordLayer => {
            if app_bytes == 0 {
                return 0;
            }
            let records = app_bytes.div_ceil(RECORD_MAX_PLAINTEXT);
            let stream = app_bytes + records * RECORD_OVERHEAD;
            plain_wire_bytes(stream, mtu)
        }
        SecurityMode::PacketLayer => {
            if app_bytes == 0 {
                return 0;
            }
            let per_packet = esp_max_payload_for(mtu);
            let mut total = 0;
            let mut remaining = app_bytes;
            while remaining > 0 {
                let chunk = remaining.min(per_packet);
                total += esp_wire_len(TCP_HEADER_LEN + chunk);
                remaining -= chunk;
            }
            total
        }
    }
}

/// Largest application chunk a single ESP datagram can carry at `mtu`.
fn esp_max_payload_for(mtu: usize) -> usize {
    (mtu - ESP_FIXED_OVERHEAD) / ESP_PAD_BLOCK * ESP_PAD_BLOCK - 2 - TCP_HEADER_LEN
}

/// Bytes on the wire consumed by the connection-setup exchange for `mode`.
///
/// Plain and packet-layer channels start without any preamble; the record
/// layer spends four handshake messages, each carried as an ordinary plain
/// packetized stream in its own flight.
pub fn handshake_wire_bytes(mode: SecurityMode, mtu: usize) -> usize {
    match mode {
        SecurityMode::Plain | SecurityMode::PacketLayer => 0,
        SecurityMode::RecordLayer => HANDSHAKE_MSG_SIZES
            .iter()
            .map(|&len| plain_wire_bytes(len, mtu))
            .sum(),
    }
}
