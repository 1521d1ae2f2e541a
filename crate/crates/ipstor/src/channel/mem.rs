//! Deterministic in-memory transport with a virtual clock.
//!
//! Both connection ends and the link between them live in one [`MemNet`]
//! driven by a discrete-event loop. Time is integer nanoseconds. Each
//! endpoint has a serial sealer and opener, each direction a serial link,
//! and every packet pays (in order) its sealing cost, link serialization,
//! propagation delay, and opening cost. Runs with the same inputs produce
//! identical packet timings, byte for byte.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::ops::Range;
use std::rc::Rc;
use std::sync::Arc;

use crate::channel::packet::Endpoint;
use crate::channel::pipeline::{PipelinePair, Role, SendOutput};
use crate::channel::{
    mem_initiator_endpoint, mem_target_endpoint, ByteChannel, CryptoCostModel, LinkParams,
    RxChunk, SecurityMode, DEFAULT_PSK, MEM_INITIATOR_BASE_PORT,
};
use crate::error::{Error, Result};
use crate::target::{TargetConn, TargetEngine};
use crate::trace::{Direction, RowId, Trace};

/// Configuration of one simulated connection.
#[derive(Debug, Clone, Copy)]
pub struct MemConfig {
    pub mode: SecurityMode,
    pub link: LinkParams,
    pub cost: CryptoCostModel,
    pub psk: [u8; 32],
    pub seed: u64,
    /// Initial virtual time; lets a second connection continue the clock
    /// where a previous one stopped.
    pub start_ns: u64,
    pub client_port: u16,
}

impl Default for MemConfig {
    fn default() -> MemConfig {
        MemConfig {
            mode: SecurityMode::Plain,
            link: LinkParams::default(),
            cost: CryptoCostModel::default(),
            psk: DEFAULT_PSK,
            seed: 0,
            start_ns: 0,
            client_port: MEM_INITIATOR_BASE_PORT,
        }
    }
}

/// What sits at the far end of the simulated link.
pub enum MemPeer {
    /// A live target session: received bytes are fed to it and its
    /// responses are sealed and sent back.
    Engine(Box<TargetConn>),
    /// A byte sink that never answers; used to measure one-way traffic.
    Sink(Vec<u8>),
}

enum EvDir {
    ToTarget,
    ToInitiator,
}

struct Event {
    time: u64,
    seq: u64,
    dir: EvDir,
    bytes: Vec<u8>,
    wire_len: u64,
    label: &'static str,
}

impl PartialEq for Event {
    fn eq(&self, other: &Event) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Event) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Event) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// The simulated network: two pipeline endpoints, a link, and a clock.
pub struct MemNet {
    clock_ns: u64,
    link: LinkParams,
    i_pair: PipelinePair,
    t_pair: PipelinePair,
    /// When each serial resource next becomes free.
    i_sealer_free: u64,
    t_sealer_free: u64,
    i_opener_free: u64,
    t_opener_free: u64,
    i2t_link_free: u64,
    t2i_link_free: u64,
    events: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    trace: Trace,
    peer: MemPeer,
    i_rx: VecDeque<RxChunk>,
    i_ep: Endpoint,
    t_ep: Endpoint,
    handshaken: bool,
}

impl MemNet {
    fn new(cfg: MemConfig, peer: MemPeer, trace: Trace) -> Result<MemNet> {
        let i_ep = mem_initiator_endpoint(cfg.client_port);
        let t_ep = mem_target_endpoint();
        let i_pair = PipelinePair::new(
            cfg.mode,
            Role::Client,
            cfg.psk,
            cfg.cost,
            i_ep,
            t_ep,
            cfg.link.mtu,
            cfg.seed,
        )?;
        let t_pair = PipelinePair::new(
            cfg.mode,
            Role::Server,
            cfg.psk,
            cfg.cost,
            t_ep,
            i_ep,
            cfg.link.mtu,
            cfg.seed ^ 0x7365_7276,
        )?;
        Ok(MemNet {
            clock_ns: cfg.start_ns,
            link: cfg.link,
            i_pair,
            t_pair,
            i_sealer_free: cfg.start_ns,
            t_sealer_free: cfg.start_ns,
            i_opener_free: cfg.start_ns,
            t_opener_free: cfg.start_ns,
            i2t_link_free: cfg.start_ns,
            t2i_link_free: cfg.start_ns,
            events: BinaryHeap::new(),
            next_seq: 0,
            trace,
            peer,
            i_rx: VecDeque::new(),
            i_ep,
            t_ep,
            handshaken: false,
        })
    }

    /// Current virtual time.
    pub fn clock_ns(&self) -> u64 {
        self.clock_ns
    }

    /// When the initiator-to-target link last finished serializing; test
    /// hook for the bandwidth model.
    pub fn uplink_busy_until(&self) -> u64 {
        self.i2t_link_free
    }

    fn ser_ns(&self, wire_len: u64) -> u64 {
        match self.link.bandwidth_bps {
            None => 0,
            Some(bps) => ((wire_len as f64) * 8.0 / bps * 1e9).round() as u64,
        }
    }

    fn push_event(&mut self, time: u64, dir: EvDir, bytes: Vec<u8>, wire_len: u64, label: &'static str) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(Reverse(Event {
            time,
            seq,
            dir,
            bytes,
            wire_len,
            label,
        }));
    }

    /// Schedules a batch of sealed packets leaving the initiator at `t0`,
    /// recording an outbound trace row per packet at its link-entry time.
    /// Returns each packet's row and the application ranges it carries.
    fn schedule_from_initiator(
        &mut self,
        out: SendOutput,
        t0: u64,
    ) -> Vec<(RowId, Vec<Range<u64>>)> {
        let seal_start = self.i_sealer_free.max(t0);
        let mut rows = Vec::new();
        for p in out.packets {
            let ready = seal_start + p.seal_cost_cum_ns;
            let entry = self.i2t_link_free.max(ready);
            let wire_len = p.packet.wire_len() as u64;
            let ser = self.ser_ns(wire_len);
            self.i2t_link_free = entry + ser;
            let arrival = entry + ser + self.link.one_way_delay_ns;
            let row = self.trace.record_frame(
                entry,
                self.i_ep.to_string(),
                self.t_ep.to_string(),
                p.packet.label,
                p.info,
                wire_len,
                0,
                Direction::InitiatorToTarget,
                None,
            );
            rows.push((row, p.app_ranges));
            self.push_event(arrival, EvDir::ToTarget, p.packet.bytes, wire_len, p.packet.label);
        }
        self.i_sealer_free = seal_start + out.total_seal_cost_ns;
        rows
    }

    /// Schedules sealed packets leaving the target at `t0`. No trace rows
    /// here: capture happens at the initiator, on delivery.
    fn schedule_from_target(&mut self, out: SendOutput, t0: u64) {
        let seal_start = self.t_sealer_free.max(t0);
        for p in out.packets {
            let ready = seal_start + p.seal_cost_cum_ns;
            let entry = self.t2i_link_free.max(ready);
            let wire_len = p.packet.wire_len() as u64;
            let ser = self.ser_ns(wire_len);
            self.t2i_link_free = entry + ser;
            let arrival = entry + ser + self.link.one_way_delay_ns;
            self.push_event(arrival, EvDir::ToInitiator, p.packet.bytes, wire_len, p.packet.label);
        }
        self.t_sealer_free = seal_start + out.total_seal_cost_ns;
    }

    /// Processes the earliest pending event. Returns false when the queue
    /// is empty.
    fn step(&mut self) -> Result<bool> {
        let Some(Reverse(ev)) = self.events.pop() else {
            return Ok(false);
        };
        self.clock_ns = self.clock_ns.max(ev.time);
        match ev.dir {
            EvDir::ToTarget => {
                let open_start = self.t_opener_free.max(ev.time);
                let r = self.t_pair.recv_packet(&ev.bytes)?;
                let done = open_start + r.open_cost_ns;
                self.t_opener_free = done;
                self.clock_ns = self.clock_ns.max(done);
                for reply in r.replies {
                    self.schedule_from_target(reply, done);
                }
                if !r.app.is_empty() {
                    let responses = match &mut self.peer {
                        MemPeer::Engine(conn) => conn.on_bytes(&r.app)?,
                        MemPeer::Sink(buf) => {
                            buf.extend_from_slice(&r.app);
                            Vec::new()
                        }
                    };
                    if !responses.is_empty() {
                        let out = self.t_pair.send(&responses)?;
                        self.schedule_from_target(out, done);
                    }
                }
            }
            EvDir::ToInitiator => {
                let open_start = self.i_opener_free.max(ev.time);
                let r = self.i_pair.recv_packet(&ev.bytes)?;
                let done = open_start + r.open_cost_ns;
                self.i_opener_free = done;
                self.clock_ns = self.clock_ns.max(done);
                let row = self.trace.record_frame(
                    done,
                    self.t_ep.to_string(),
                    self.i_ep.to_string(),
                    ev.label,
                    r.info,
                    ev.wire_len,
                    0,
                    Direction::TargetToInitiator,
                    None,
                );
                for reply in r.replies {
                    self.schedule_from_initiator(reply, done);
                }
                if !r.app.is_empty() || !r.app_ranges.is_empty() {
                    self.i_rx.push_back(RxChunk {
                        bytes: r.app,
                        time_ns: done,
                        row_spans: vec![(row, r.app_ranges)],
                    });
                }
            }
        }
        Ok(true)
    }

    /// Runs the client handshake to completion (no-op for modes without
    /// one). Idempotent.
    pub fn client_handshake(&mut self) -> Result<()> {
        if self.handshaken {
            return Ok(());
        }
        let out = self.i_pair.start_handshake()?;
        let t0 = self.clock_ns;
        self.schedule_from_initiator(out, t0);
        while !self.i_pair.handshake_complete() {
            if !self.step()? {
                return Err(Error::Handshake("handshake stalled".into()));
            }
        }
        self.handshaken = true;
        Ok(())
    }

    pub fn initiator_send(&mut self, data: &[u8]) -> Result<Vec<(RowId, Vec<Range<u64>>)>> {
        let out = self.i_pair.send(data)?;
        let t0 = self.clock_ns;
        Ok(self.schedule_from_initiator(out, t0))
    }

    pub fn initiator_recv(&mut self) -> Result<RxChunk> {
        loop {
            if let Some(chunk) = self.i_rx.pop_front() {
                return Ok(chunk);
            }
            if !self.step()? {
                return Err(Error::Transport(
                    "nothing in flight and the peer has nothing to send".into(),
                ));
            }
        }
    }

    /// Runs the event loop until nothing is in flight.
    pub fn drain(&mut self) -> Result<()> {
        while self.step()? {}
        Ok(())
    }

    /// Bytes accumulated by a sink peer.
    pub fn sink_received(&self) -> Vec<u8> {
        match &self.peer {
            MemPeer::Sink(buf) => buf.clone(),
            MemPeer::Engine(_) => Vec::new(),
        }
    }
}

/// Initiator-side handle on a [`MemNet`]; this is the `ByteChannel` the
/// initiator drives.
pub struct MemChannel {
    net: Rc<RefCell<MemNet>>,
    local: Endpoint,
    peer: Endpoint,
}

impl MemChannel {
    /// Shared handle on the underlying network, for clock inspection and
    /// draining.
    pub fn net(&self) -> Rc<RefCell<MemNet>> {
        self.net.clone()
    }
}

/// A connection to a live target engine.
pub fn mem_channel_to_engine(
    cfg: MemConfig,
    engine: Arc<TargetEngine>,
    trace: Trace,
) -> Result<MemChannel> {
    let conn = TargetConn::new(engine, cfg.seed ^ 0x6368_6170);
    mem_channel(cfg, MemPeer::Engine(Box::new(conn)), trace)
}

/// A connection whose far end only absorbs bytes.
pub fn mem_sink_channel(cfg: MemConfig, trace: Trace) -> Result<MemChannel> {
    mem_channel(cfg, MemPeer::Sink(Vec::new()), trace)
}

fn mem_channel(cfg: MemConfig, peer: MemPeer, trace: Trace) -> Result<MemChannel> {
    let net = MemNet::new(cfg, peer, trace)?;
    let (local, peer) = (net.i_ep, net.t_ep);
    Ok(MemChannel {
        net: Rc::new(RefCell::new(net)),
        local,
        peer,
    })
}

impl ByteChannel for MemChannel {
    fn handshake(&mut self) -> Result<()> {
        self.net.borrow_mut().client_handshake()
    }

    fn send(&mut self, data: &[u8]) -> Result<Vec<(RowId, Vec<Range<u64>>)>> {
        self.net.borrow_mut().initiator_send(data)
    }

    fn recv_some(&mut self) -> Result<RxChunk> {
        self.net.borrow_mut().initiator_recv()
    }

    fn now_ns(&self) -> u64 {
        self.net.borrow().clock_ns
    }

    fn local(&self) -> Endpoint {
        self.local
    }

    fn peer(&self) -> Endpoint {
        self.peer
    }

    fn close(&mut self) -> Result<()> {
        Ok(())
    }
}
