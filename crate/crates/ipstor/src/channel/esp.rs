//! Packet-level channel security (encapsulated transport, IPsec-ESP-style).
//!
//! Each pseudo-TCP segment — 20-byte inner header plus payload — is wrapped
//! whole inside an encapsulating packet:
//!
//! ```text
//! [outer IP, 20] [SPI, 4][sequence, 4] [IV, 16]
//!     [encrypted: inner segment + padding + pad length (1) + next header (1)]
//! [integrity value, 16]
//! ```
//!
//! The encrypted span is padded to a multiple of 16 bytes. Receivers accept
//! strictly increasing sequence numbers only, so replayed packets are
//! rejected before decryption.

use std::net::Ipv4Addr;

use crate::channel::crypto::{SealKey, NONCE_LEN, TAG_LEN};
use crate::channel::packet::{parse_ip_header, write_ip_header, IP_HEADER_LEN, PROTO_ESP, TCP_HEADER_LEN};
use crate::error::{Error, Result};

/// SPI + sequence number.
pub const ESP_HEADER_LEN: usize = 8;

/// Initialization-vector field length.
pub const ESP_IV_LEN: usize = 16;

/// Pad-to-multiple for the encrypted span.
pub const ESP_PAD_BLOCK: usize = 16;

/// Integrity-check value length.
pub const ESP_ICV_LEN: usize = TAG_LEN;

/// Fixed overhead before padding: outer IP + ESP header + IV + ICV.
pub const ESP_FIXED_OVERHEAD: usize = IP_HEADER_LEN + ESP_HEADER_LEN + ESP_IV_LEN + ESP_ICV_LEN;

const NEXT_HEADER_TCP: u8 = 6;

/// Length of the encrypted span for an inner segment of `inner_len` bytes:
/// segment plus the 2-byte trailer, padded to a 16-byte multiple.
pub fn esp_encrypted_len(inner_len: usize) -> usize {
    let raw = inner_len + 2;
    raw.div_ceil(ESP_PAD_BLOCK) * ESP_PAD_BLOCK
}

/// Full wire length of a sealed packet for an inner segment of
/// `inner_len` bytes.
pub fn esp_wire_len(inner_len: usize) -> usize {
    ESP_FIXED_OVERHEAD + esp_encrypted_len(inner_len)
}

/// Largest application payload (inner segment minus its 20-byte header)
/// that still fits in `mtu` wire bytes. 1418 for the default 1500.
pub fn esp_max_payload(mtu: usize) -> usize {
    let room = mtu - ESP_FIXED_OVERHEAD; // for the encrypted span
    let span = room / ESP_PAD_BLOCK * ESP_PAD_BLOCK;
    span - 2 - TCP_HEADER_LEN
}

/// Sealing side of one direction.
pub struct PacketSealer {
    key: SealKey,
    spi: u32,
    seq: u64,
    src: Ipv4Addr,
    dst: Ipv4Addr,
}

impl PacketSealer {
    pub fn new(key: &[u8; 32], spi: u32, src: Ipv4Addr, dst: Ipv4Addr) -> PacketSealer {
        PacketSealer {
            key: SealKey::new(key),
            spi,
            seq: 0,
            src,
            dst,
        }
    }

    /// Sequence number the next sealed packet will carry.
    pub fn next_seq(&self) -> u64 {
        self.seq + 1
    }

    /// Seals one inner segment (pseudo-TCP header plus payload) into a full
    /// encapsulated packet. The encrypted span length is always a multiple
    /// of 16.
    pub fn seal_packet(&mut self, inner_segment: &[u8]) -> Result<Vec<u8>> {
        if inner_segment.len() < TCP_HEADER_LEN {
            return Err(Error::invalid(
                "inner segment shorter than its transport header".to_string(),
            ));
        }
        self.seq += 1;
        let enc_len = esp_encrypted_len(inner_segment.len());
        let pad_len = enc_len - inner_segment.len() - 2;
        let total = ESP_FIXED_OVERHEAD + enc_len;
        if total > u16::MAX as usize {
            return Err(Error::invalid(format!(
                "sealed packet of {total} bytes overflows the length field"
            )));
        }

        let mut plaintext = Vec::with_capacity(enc_len);
        plaintext.extend_from_slice(inner_segment);
        plaintext.resize(inner_segment.len() + pad_len, 0);
        plaintext.push(pad_len as u8);
        plaintext.push(NEXT_HEADER_TCP);

        let mut out = vec![0u8; IP_HEADER_LEN + ESP_HEADER_LEN + ESP_IV_LEN];
        write_ip_header(&mut out[..IP_HEADER_LEN], total, PROTO_ESP, self.src, self.dst);
        out[20..24].copy_from_slice(&self.spi.to_be_bytes());
        out[24..28].copy_from_slice(&(self.seq as u32).to_be_bytes());
        let iv = esp_iv(self.spi, self.seq);
        out[28..44].copy_from_slice(&iv);

        let aad = out[20..28].to_vec();
        let nonce: [u8; NONCE_LEN] = iv[..NONCE_LEN].try_into().unwrap();
        let sealed = self.key.seal(&nonce, &aad, &plaintext);
        // Tag goes last, after the encrypted span, as the integrity value.
        out.extend_from_slice(&sealed);
        debug_assert_eq!(out.len(), total);
        Ok(out)
    }
}

/// Opening side of one direction.
pub struct PacketOpener {
    key: SealKey,
    spi: u32,
    last_seq: u64,
}

impl PacketOpener {
    pub fn new(key: &[u8; 32], spi: u32) -> PacketOpener {
        PacketOpener {
            key: SealKey::new(key),
            spi,
            last_seq: 0,
        }
    }

    /// Verifies and unwraps one encapsulated packet, returning the inner
    /// segment. Replays (sequence not strictly above the last accepted)
    /// are rejected before any decryption.
    pub fn open_packet(&mut self, wire: &[u8]) -> Result<Vec<u8>> {
        let hdr = parse_ip_header(wire)?;
        if hdr.proto != PROTO_ESP {
            return Err(Error::protocol(format!(
                "expected encapsulated packet, got protocol {}",
                hdr.proto
            )));
        }
        if wire.len() < hdr.total_len {
            return Err(Error::Incomplete {
                needed: hdr.total_len - wire.len(),
            });
        }
        let body = &wire[..hdr.total_len];
        if body.len() < ESP_FIXED_OVERHEAD + ESP_PAD_BLOCK {
            return Err(Error::protocol("encapsulated packet too short"));
        }
        let spi = u32::from_be_bytes(body[20..24].try_into().unwrap());
        if spi != self.spi {
            return Err(Error::protocol(format!(
                "unknown security-parameter index {spi:#010x}"
            )));
        }
        let seq = u32::from_be_bytes(body[24..28].try_into().unwrap()) as u64;
        if seq <= self.last_seq {
            return Err(Error::Replay {
                seq,
                last: self.last_seq,
            });
        }
        let enc_span = &body[IP_HEADER_LEN + ESP_HEADER_LEN + ESP_IV_LEN..];
        if enc_span.len() < ESP_ICV_LEN || !(enc_span.len() - ESP_ICV_LEN).is_multiple_of(ESP_PAD_BLOCK) {
            return Err(Error::protocol("misaligned encrypted span"));
        }
        let iv: [u8; ESP_IV_LEN] = body[28..44].try_into().unwrap();
        if iv != esp_iv(spi, seq) {
            return Err(Error::Integrity("initialization vector mismatch".to_string()));
        }
        let aad = &body[20..28];
        let nonce: [u8; NONCE_LEN] = iv[..NONCE_LEN].try_into().unwrap();
        let plaintext = self.key.open(&nonce, aad, enc_span)?;

        // Trailer: [pad bytes][pad length][next header].
        let next_header = plaintext[plaintext.len() - 1];
        let pad_len = plaintext[plaintext.len() - 2] as usize;
        if next_header != NEXT_HEADER_TCP {
            return Err(Error::protocol(format!(
                "unexpected next-header value {next_header}"
            )));
        }
        if pad_len + 2 > plaintext.len() {
            return Err(Error::protocol("pad length exceeds packet"));
        }
        let inner_end = plaintext.len() - 2 - pad_len;
        if plaintext[inner_end..plaintext.len() - 2].iter().any(|&b| b != 0) {
            return Err(Error::protocol("nonzero pad byte"));
        }
        if inner_end < TCP_HEADER_LEN {
            return Err(Error::protocol("inner segment shorter than its header"));
        }
        self.last_seq = seq;
        Ok(plaintext[..inner_end].to_vec())
    }
}

/// Deterministic per-packet IV derived from SPI and sequence number.
fn esp_iv(spi: u32, seq: u64) -> [u8; ESP_IV_LEN] {
    let mut iv = [0u8; ESP_IV_LEN];
    iv[..4].copy_from_slice(&spi.to_be_bytes());
    iv[4..12].copy_from_slice(&seq.to_be_bytes());
    iv
}
