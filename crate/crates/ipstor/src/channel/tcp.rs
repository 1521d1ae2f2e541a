//! Loopback TCP transport.
//!
//! The same pseudo-packets the simulator exchanges are written over a real
//! socket; the embedded IP total-length field doubles as the framing, so no
//! extra length prefix is needed. Timestamps come from a monotonic clock
//! whose epoch is the moment the channel connected, keeping trace times
//! comparable in shape (though not in determinism) to simulated runs.

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::ops::Range;
use std::time::{Duration, Instant};

use crate::channel::packet::{peek_total_len, Endpoint};
use crate::channel::pipeline::{PipelinePair, Role, SendOutput};
use crate::channel::{ByteChannel, CryptoCostModel, RxChunk, SecurityMode, DEFAULT_MTU};
use crate::error::{Error, Result};
use crate::trace::{Direction, RowId, Trace};

/// Connection parameters for the initiator side.
#[derive(Debug, Clone, Copy)]
pub struct TcpChannelConfig {
    pub mode: SecurityMode,
    pub psk: [u8; 32],
    pub mtu: usize,
    pub rng_seed: u64,
}

impl Default for TcpChannelConfig {
    fn default() -> TcpChannelConfig {
        TcpChannelConfig {
            mode: SecurityMode::Plain,
            psk: crate::channel::DEFAULT_PSK,
            mtu: DEFAULT_MTU,
            rng_seed: 0,
        }
    }
}

/// Initiator end of a TCP connection.
pub struct TcpChannel {
    stream: TcpStream,
    pair: PipelinePair,
    trace: Trace,
    epoch: Instant,
    local: Endpoint,
    peer: Endpoint,
    local_s: String,
    peer_s: String,
    rx: Vec<u8>,
    handshaken: bool,
}

fn sock_to_endpoint(addr: SocketAddr) -> Result<Endpoint> {
    match addr {
        SocketAddr::V4(v4) => Ok(Endpoint::new(*v4.ip(), v4.port())),
        SocketAddr::V6(_) => Err(Error::Transport("IPv6 peers are not supported".into())),
    }
}

/// Connects to `addr` (host:port) and prepares the chosen security mode.
/// The server infers the mode from the first packet, so no prior agreement
/// is needed.
pub fn connect(addr: &str, cfg: TcpChannelConfig, trace: Trace) -> Result<TcpChannel> {
    let stream = TcpStream::connect(addr)
        .map_err(|e| Error::Transport(format!("cannot connect to {addr}: {e}")))?;
    stream.set_nodelay(true).ok();
    stream
        .set_read_timeout(Some(Duration::from_secs(30)))
        .ok();
    let local = sock_to_endpoint(stream.local_addr()?)?;
    let peer = sock_to_endpoint(stream.peer_addr()?)?;
    let pair = PipelinePair::new(
        cfg.mode,
        Role::Client,
        cfg.psk,
        CryptoCostModel::default(),
        local,
        peer,
        cfg.mtu,
        cfg.rng_seed,
    )?;
    Ok(TcpChannel {
        stream,
        pair,
        trace,
        epoch: Instant::now(),
        local,
        peer,
        local_s: local.to_string(),
        peer_s: peer.to_string(),
        rx: Vec::new(),
        handshaken: false,
    })
}

impl TcpChannel {
    fn read_packet(&mut self) -> Result<Vec<u8>> {
        loop {
            match peek_total_len(&self.rx) {
                Ok(total) if self.rx.len() >= total => {
                    return Ok(self.rx.drain(..total).collect());
                }
                Ok(_) | Err(Error::Incomplete { .. }) => {}
                Err(e) => return Err(e),
            }
            let mut tmp = [0u8; 16 * 1024];
            let n = self.stream.read(&mut tmp)?;
            if n == 0 {
                return Err(Error::Transport("connection closed by peer".into()));
            }
            self.rx.extend_from_slice(&tmp[..n]);
        }
    }

    /// Writes a batch of sealed packets, recording an outbound row each.
    fn write_out(&mut self, out: SendOutput) -> Result<Vec<(RowId, Vec<Range<u64>>)>> {
        let mut rows = Vec::new();
        for p in out.packets {
            let row = self.trace.record_frame(
                self.now_ns(),
                self.local_s.clone(),
                self.peer_s.clone(),
                p.packet.label,
                p.info,
                p.packet.wire_len() as u64,
                0,
                Direction::InitiatorToTarget,
                None,
            );
            rows.push((row, p.app_ranges));
            self.stream.write_all(&p.packet.bytes)?;
        }
        Ok(rows)
    }
}

impl ByteChannel for TcpChannel {
    fn handshake(&mut self) -> Result<()> {
        if self.handshaken {
            return Ok(());
        }
        let out = self.pair.start_handshake()?;
        self.write_out(out)?;
        while !self.pair.handshake_complete() {
            let packet = self.read_packet()?;
            let wire_len = packet.len() as u64;
            let r = self.pair.recv_packet(&packet)?;
            self.trace.record_frame(
                self.now_ns(),
                self.peer_s.clone(),
                self.local_s.clone(),
                self.pair.wire_label(),
                r.info,
                wire_len,
                0,
                Direction::TargetToInitiator,
                None,
            );
            for reply in r.replies {
                self.write_out(reply)?;
            }
        }
        self.handshaken = true;
        Ok(())
    }

    fn send(&mut self, data: &[u8]) -> Result<Vec<(RowId, Vec<Range<u64>>)>> {
        let out = self.pair.send(data)?;
        self.write_out(out)
    }

    fn recv_some(&mut self) -> Result<RxChunk> {
        let packet = self.read_packet()?;
        let wire_len = packet.len() as u64;
        let r = self.pair.recv_packet(&packet)?;
        let time_ns = self.now_ns();
        let row = self.trace.record_frame(
            time_ns,
            self.peer_s.clone(),
            self.local_s.clone(),
            self.pair.wire_label(),
            r.info,
            wire_len,
            0,
            Direction::TargetToInitiator,
            None,
        );
        Ok(RxChunk {
            bytes: r.app,
            time_ns,
            row_spans: vec![(row, r.app_ranges)],
        })
    }

    fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    fn local(&self) -> Endpoint {
        self.local
    }

    fn peer(&self) -> Endpoint {
        self.peer
    }

    fn close(&mut self) -> Result<()> {
        self.stream.shutdown(Shutdown::Both).ok();
        Ok(())
    }
}
