//! Pseudo TCP/IP packet framing.
//!
//! The link carries self-describing pseudo-packets so both transports (the
//! simulated link and a real loopback stream) move identical bytes. A plain
//! data packet is a 20-byte IPv4-shaped header plus a 20-byte TCP-shaped
//! header plus payload; the encapsulated mode replaces the TCP header with
//! its own framing (see `esp`). The IP header's total-length field at bytes
//! 2..4 makes packets splittable from a byte stream.

use std::net::Ipv4Addr;

use crate::error::{Error, Result};

/// Pseudo IPv4 header length.
pub const IP_HEADER_LEN: usize = 20;

/// Pseudo TCP header length.
pub const TCP_HEADER_LEN: usize = 20;

/// Per-packet overhead of a plain data packet.
pub const PLAIN_OVERHEAD: usize = IP_HEADER_LEN + TCP_HEADER_LEN;

/// Smallest supported maximum transmission unit.
pub const MIN_MTU: usize = 576;

/// IP protocol numbers used in the pseudo header.
pub const PROTO_TCP: u8 = 6;
pub const PROTO_ESP: u8 = 50;

/// One endpoint of the pseudo link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoint {
    pub addr: Ipv4Addr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(addr: Ipv4Addr, port: u16) -> Endpoint {
        Endpoint { addr, port }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.addr, self.port)
    }
}

/// A framed unit on the link.
#[derive(Debug, Clone)]
pub struct PseudoPacket {
    /// Per-direction packet counter, strictly increasing.
    pub seq: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    /// Wire-protocol label for the trace ("TCP", "RECORD", "ESP").
    pub label: &'static str,
    /// Carried bytes above the transport headers.
    pub payload_len: usize,
    /// Full wire bytes, headers included.
    pub bytes: Vec<u8>,
}

impl PseudoPacket {
    pub fn wire_len(&self) -> usize {
        self.bytes.len()
    }
}

/// Writes the 20-byte pseudo IPv4 header.
pub fn write_ip_header(
    buf: &mut [u8],
    total_len: usize,
    proto: u8,
    src: Ipv4Addr,
    dst: Ipv4Addr,
) {
    buf[0] = 0x45; // version 4, header length 5 words
    buf[1] = 0;
    buf[2..4].copy_from_slice(&(total_len as u16).to_be_bytes());
    buf[4..6].copy_from_slice(&[0, 0]); // identification
    buf[6..8].copy_from_slice(&0x4000u16.to_be_bytes()); // don't-fragment
    buf[8] = 64; // ttl
    buf[9] = proto;
    buf[10..12].copy_from_slice(&[0, 0]); // checksum unused
    buf[12..16].copy_from_slice(&src.octets());
    buf[16..20].copy_from_slice(&dst.octets());
}

/// Writes the 20-byte pseudo TCP header.
pub fn write_tcp_header(buf: &mut [u8], src_port: u16, dst_port: u16, seq: u32) {
    buf[0..2].copy_from_slice(&src_port.to_be_bytes());
    buf[2..4].copy_from_slice(&dst_port.to_be_bytes());
    buf[4..8].copy_from_slice(&seq.to_be_bytes());
    buf[8..12].copy_from_slice(&[0, 0, 0, 0]); // ack unused
    buf[12] = 0x50; // data offset 5 words
    buf[13] = 0x18; // PSH|ACK
    buf[14..16].copy_from_slice(&0xFFFFu16.to_be_bytes()); // window
    buf[16..20].copy_from_slice(&[0, 0, 0, 0]); // checksum, urgent
}

/// Parsed view of a pseudo packet's headers.
#[derive(Debug, Clone, Copy)]
pub struct PacketHeader {
    pub total_len: usize,
    pub proto: u8,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
}

/// Reads the IP-level header of a packet. Needs at least `IP_HEADER_LEN`
/// bytes; use [`peek_total_len`] to split packets out of a stream first.
pub fn parse_ip_header(buf: &[u8]) -> Result<PacketHeader> {
    if buf.len() < IP_HEADER_LEN {
        return Err(Error::Incomplete {
            needed: IP_HEADER_LEN - buf.len(),
        });
    }
    if buf[0] != 0x45 {
        return Err(Error::protocol(format!(
            "bad pseudo-IP version/length byte {:#04x}",
            buf[0]
        )));
    }
    let total_len = u16::from_be_bytes([buf[2], buf[3]]) as usize;
    if total_len < IP_HEADER_LEN {
        return Err(Error::protocol(format!(
            "pseudo-IP total length {total_len} shorter than its header"
        )));
    }
    Ok(PacketHeader {
        total_len,
        proto: buf[9],
        src: Ipv4Addr::new(buf[12], buf[13], buf[14], buf[15]),
        dst: Ipv4Addr::new(buf[16], buf[17], buf[18], buf[19]),
    })
}

/// Returns the declared total length of the packet at the front of `buf`,
/// or `Incomplete` if even the length field is not fully buffered.
pub fn peek_total_len(buf: &[u8]) -> Result<usize> {
    if buf.len() < 4 {
        return Err(Error::Incomplete { needed: 4 - buf.len() });
    }
    if buf[0] != 0x45 {
        return Err(Error::protocol(format!(
            "bad pseudo-IP version/length byte {:#04x}",
            buf[0]
        )));
    }
    let total_len = u16::from_be_bytes([buf[2], buf[3]]) as usize;
    if total_len < IP_HEADER_LEN {
        return Err(Error::protocol(format!(
            "pseudo-IP total length {total_len} shorter than its header"
        )));
    }
    Ok(total_len)
}

/// Splits a byte stream into TCP-framed pseudo-packets of at most `mtu`
/// wire bytes each.
pub struct Packetizer {
    pub src: Endpoint,
    pub dst: Endpoint,
    mtu: usize,
    next_seq: u64,
}

impl Packetizer {
    /// `mtu` below [`MIN_MTU`] is rejected.
    pub fn new(src: Endpoint, dst: Endpoint, mtu: usize) -> Result<Packetizer> {
        if mtu < MIN_MTU {
            return Err(Error::invalid(format!(
                "mtu {mtu} below the minimum of {MIN_MTU}"
            )));
        }
        Ok(Packetizer {
            src,
            dst,
            mtu,
            next_seq: 1,
        })
    }

    /// Largest payload one packet can carry.
    pub fn max_payload(&self) -> usize {
        self.mtu - PLAIN_OVERHEAD
    }

    /// Frames `stream` into packets. Empty input yields no packets; every
    /// packet's wire length is its payload plus exactly
    /// [`PLAIN_OVERHEAD`].
    pub fn packetize(&mut self, stream: &[u8], label: &'static str) -> Vec<PseudoPacket> {
        let mut out = Vec::new();
        for chunk in stream.chunks(self.max_payload()) {
            let total = PLAIN_OVERHEAD + chunk.len();
            let mut bytes = vec![0u8; total];
            write_ip_header(&mut bytes[..IP_HEADER_LEN], total, PROTO_TCP, self.src.addr, self.dst.addr);
            write_tcp_header(
                &mut bytes[IP_HEADER_LEN..PLAIN_OVERHEAD],
                self.src.port,
                self.dst.port,
                self.next_seq as u32,
            );
            bytes[PLAIN_OVERHEAD..].copy_from_slice(chunk);
            out.push(PseudoPacket {
                seq: self.next_seq,
                src: self.src,
                dst: self.dst,
                label,
                payload_len: chunk.len(),
                bytes,
            });
            self.next_seq += 1;
        }
        out
    }

    /// Wraps an already-framed encapsulated packet body (which carries its
    /// own IP header) in the bookkeeping struct, advancing the direction
    /// counter.
    pub fn adopt(&mut self, bytes: Vec<u8>, payload_len: usize, label: &'static str) -> PseudoPacket {
        let seq = self.next_seq;
        self.next_seq += 1;
        PseudoPacket {
            seq,
            src: self.src,
            dst: self.dst,
            label,
            payload_len,
            bytes,
        }
    }
}
