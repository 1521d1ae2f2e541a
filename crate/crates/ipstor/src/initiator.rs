//! The initiator: a synchronous client for the storage target.
//!
//! [`PduChannel`] frames PDUs over any [`ByteChannel`] and records the
//! protocol-level trace rows (the transport records the wire-level ones).
//! [`Initiator`] drives login, discovery, reads, writes, pings, and logout
//! on top of it.

use std::ops::Range;

use crate::channel::crypto::chap_digest;
use crate::channel::pipeline::LABEL_PDU;
use crate::channel::{ByteChannel, RxChunk};
use crate::error::{Error, Result};
use crate::pdu::cdb::{encode_cdb, Cdb, CdbOp, BLOCK_SIZE, CDB_LEN};
use crate::pdu::text::{decode_text, encode_text, text_value};
use crate::pdu::{
    encode_pdu, login_status, pdu_summary, scsi_status, Bhs, Opcode, Pdu, BHS_LEN,
    DEFAULT_MAX_DATA_SEGMENT,
};
use crate::target::DEFAULT_TARGET_NAME;
use crate::trace::{Direction, Trace};

/// Default initiator name.
pub const DEFAULT_INITIATOR_NAME: &str = "iqn.2025-01.ipstor:initiator";

/// Initiator session parameters.
#[derive(Debug, Clone)]
pub struct InitiatorConfig {
    pub name: String,
    pub target_name: String,
    /// Largest data segment we are willing to receive; the negotiated
    /// value is the smaller of this and the target's limit.
    pub max_recv_data_segment: usize,
    pub chap: Option<(String, String)>,
}

impl Default for InitiatorConfig {
    fn default() -> InitiatorConfig {
        InitiatorConfig {
            name: DEFAULT_INITIATOR_NAME.to_string(),
            target_name: DEFAULT_TARGET_NAME.to_string(),
            max_recv_data_segment: 65536,
            chap: None,
        }
    }
}

/// PDU framing over a byte channel, with trace bookkeeping.
///
/// Outbound frames are stamped when handed to the transport; inbound
/// frames when their final byte has been delivered (and, for the simulated
/// link, opened). Data-segment bytes are attributed to the wire frames
/// that carried them by intersecting stream offsets.
pub struct PduChannel {
    ch: Box<dyn ByteChannel>,
    trace: Trace,
    local_s: String,
    peer_s: String,
    tx_off: u64,
    rx_buf: Vec<u8>,
    /// Stream offset of `rx_buf[0]` in the receive direction.
    rx_base: u64,
    /// Wire rows whose application ranges have not all been consumed yet.
    pending_spans: Vec<(crate::trace::RowId, Vec<Range<u64>>)>,
    last_chunk_time: u64,
}

fn overlap_len(spans: &[Range<u64>], r: &Range<u64>) -> u64 {
    spans
        .iter()
        .map(|s| s.end.min(r.end).saturating_sub(s.start.max(r.start)))
        .sum()
}

impl PduChannel {
    pub fn new(ch: Box<dyn ByteChannel>, trace: Trace) -> PduChannel {
        let local_s = ch.local().to_string();
        let peer_s = ch.peer().to_string();
        PduChannel {
            ch,
            trace,
            local_s,
            peer_s,
            tx_off: 0,
            rx_buf: Vec::new(),
            rx_base: 0,
            pending_spans: Vec::new(),
            last_chunk_time: 0,
        }
    }

    pub fn handshake(&mut self) -> Result<()> {
        self.ch.handshake()
    }

    pub fn now_ns(&self) -> u64 {
        self.ch.now_ns()
    }

    pub fn close(&mut self) -> Result<()> {
        self.ch.close()
    }

    pub fn send_pdu(&mut self, pdu: &Pdu) -> Result<()> {
        let wire = encode_pdu(pdu)?;
        self.trace.record_frame(
            self.ch.now_ns(),
            self.local_s.clone(),
            self.peer_s.clone(),
            LABEL_PDU,
            pdu_summary(pdu),
            wire.len() as u64,
            pdu.data_payload_len() as u64,
            Direction::InitiatorToTarget,
            Some(pdu.bhs.initiator_task_tag),
        );
        let rows = self.ch.send(&wire)?;
        // Credit this PDU's data segment to the wire frames that carry it.
        let dsl = pdu.data_payload_len() as u64;
        if dsl > 0 {
            let seg = (self.tx_off + BHS_LEN as u64)..(self.tx_off + BHS_LEN as u64 + dsl);
            for (row, spans) in &rows {
                let n = overlap_len(spans, &seg);
                if n > 0 {
                    self.trace.add_payload(*row, n);
                }
            }
        }
        self.tx_off += wire.len() as u64;
        Ok(())
    }

    pub fn recv_pdu(&mut self) -> Result<Pdu> {
        loop {
            match crate::pdu::decode_pdu(&self.rx_buf, DEFAULT_MAX_DATA_SEGMENT) {
                Ok((pdu, used)) => {
                    let dsl = pdu.data_payload_len() as u64;
                    if dsl > 0 {
                        let seg =
                            (self.rx_base + BHS_LEN as u64)..(self.rx_base + BHS_LEN as u64 + dsl);
                        for (row, spans) in &self.pending_spans {
                            let n = overlap_len(spans, &seg);
                            if n > 0 {
                                self.trace.add_payload(*row, n);
                            }
                        }
                    }
                    self.rx_base += used as u64;
                    self.rx_buf.drain(..used);
                    let base = self.rx_base;
                    self.pending_spans
                        .retain(|(_, spans)| spans.iter().any(|s| s.end > base));
                    self.trace.record_frame(
                        self.last_chunk_time,
                        self.peer_s.clone(),
                        self.local_s.clone(),
                        LABEL_PDU,
                        pdu_summary(&pdu),
                        pdu.wire_len() as u64,
                        dsl,
                        Direction::TargetToInitiator,
                        Some(pdu.bhs.initiator_task_tag),
                    );
                    return Ok(pdu);
                }
                Err(Error::Incomplete { .. }) => {
                    let RxChunk {
                        bytes,
                        time_ns,
                        row_spans,
                    } = self.ch.recv_some()?;
                    self.rx_buf.extend_from_slice(&bytes);
                    self.last_chunk_time = time_ns;
                    self.pending_spans.extend(row_spans);
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Discovery,
    FullFeature,
    LoggedOut,
}

/// A synchronous initiator session.
pub struct Initiator {
    ch: PduChannel,
    cfg: InitiatorConfig,
    phase: Phase,
    next_tag: u32,
    cmd_sn: u32,
    exp_stat_sn: Option<u32>,
    negotiated_max: usize,
}

impl Initiator {
    pub fn new(ch: Box<dyn ByteChannel>, cfg: InitiatorConfig, trace: Trace) -> Initiator {
        let negotiated_max = cfg.max_recv_data_segment;
        Initiator {
            ch: PduChannel::new(ch, trace),
            cfg,
            phase: Phase::Idle,
            next_tag: 0,
            cmd_sn: 1,
            exp_stat_sn: None,
            negotiated_max,
        }
    }

    /// Data-segment limit agreed at login.
    pub fn negotiated_max_data_segment(&self) -> usize {
        self.negotiated_max
    }

    pub fn now_ns(&self) -> u64 {
        self.ch.now_ns()
    }

    fn fresh_tag(&mut self) -> u32 {
        self.next_tag += 1;
        self.next_tag
    }

    /// Verifies a status-bearing response's StatSN: the first one is
    /// adopted, after that each must follow its predecessor.
    fn note_status(&mut self, pdu: &Pdu) -> Result<()> {
        let sn = pdu.bhs.stat_sn;
        match self.exp_stat_sn {
            None => self.exp_stat_sn = Some(sn.wrapping_add(1)),
            Some(e) if e == sn => self.exp_stat_sn = Some(e.wrapping_add(1)),
            Some(e) => {
                return Err(Error::protocol(format!(
                    "status sequence number {sn}, expected {e}"
                )))
            }
        }
        Ok(())
    }

    fn recv_expect(&mut self, opcode: Opcode, tag: u32) -> Result<Pdu> {
        let pdu = self.ch.recv_pdu()?;
        if pdu.bhs.opcode != opcode {
            return Err(Error::protocol(format!(
                "expected {opcode:?}, got {:?}",
                pdu.bhs.opcode
            )));
        }
        if pdu.bhs.initiator_task_tag != tag {
            return Err(Error::protocol(format!(
                "response for task {:#010x}, expected {tag:#010x}",
                pdu.bhs.initiator_task_tag
            )));
        }
        Ok(pdu)
    }

    fn ensure_full_feature(&self) -> Result<()> {
        match self.phase {
            Phase::FullFeature => Ok(()),
            Phase::LoggedOut => Err(Error::protocol("session is logged out")),
            _ => Err(Error::protocol("not logged in to a storage session")),
        }
    }

    /// Logs in. A discovery session may only run text queries; a normal
    /// session reaches the full-feature phase. Runs the channel security
    /// handshake first if one is pending.
    pub fn login(&mut self, discovery: bool) -> Result<()> {
        if self.phase != Phase::Idle {
            return Err(Error::protocol("already logged in"));
        }
        self.ch.handshake()?;
        let tag = self.fresh_tag();
        let mut pairs = vec![("InitiatorName".to_string(), self.cfg.name.clone())];
        if discovery {
            pairs.push(("SessionType".to_string(), "Discovery".to_string()));
        } else {
            pairs.push(("TargetName".to_string(), self.cfg.target_name.clone()));
        }
        pairs.push((
            "MaxRecvDataSegmentLength".to_string(),
            self.cfg.max_recv_data_segment.to_string(),
        ));
        if self.cfg.chap.is_some() {
            pairs.push(("AuthMethod".to_string(), "CHAP".to_string()));
        }
        let mut bhs = Bhs::new(Opcode::LoginRequest);
        bhs.initiator_task_tag = tag;
        bhs.cmd_sn = self.cmd_sn;
        self.ch.send_pdu(&Pdu::new(bhs, encode_text(&pairs)?))?;
        let mut resp = self.recv_expect(Opcode::LoginResponse, tag)?;
        self.note_status(&resp)?;

        if !resp.bhs.final_flag {
            // CHAP challenge round.
            let keys = decode_text(&resp.data)?;
            let challenge = text_value(&keys, "CHAP_C")
                .ok_or_else(|| Error::protocol("non-final login response without a challenge"))
                .and_then(|v| {
                    hex::decode(v).map_err(|_| Error::protocol("challenge is not hex"))
                })?;
            let (user, secret) = self
                .cfg
                .chap
                .clone()
                .ok_or_else(|| Error::Auth("target demands CHAP but no credentials set".into()))?;
            let digest = chap_digest(&secret, &challenge);
            let mut bhs = Bhs::new(Opcode::LoginRequest);
            bhs.initiator_task_tag = tag;
            bhs.cmd_sn = self.cmd_sn;
            let data = encode_text(&[
                ("CHAP_N".to_string(), user),
                ("CHAP_R".to_string(), hex::encode(digest)),
            ])?;
            self.ch.send_pdu(&Pdu::new(bhs, data))?;
            resp = self.recv_expect(Opcode::LoginResponse, tag)?;
            self.note_status(&resp)?;
        }

        match resp.bhs.opcode_specific[0] {
            login_status::SUCCESS => {}
            login_status::AUTH_FAILURE => {
                self.phase = Phase::LoggedOut;
                return Err(Error::Auth("login authentication failed".into()));
            }
            login_status::UNKNOWN_TARGET => {
                self.phase = Phase::LoggedOut;
                return Err(Error::protocol(format!(
                    "target does not serve {:?}",
                    self.cfg.target_name
                )));
            }
            other => {
                self.phase = Phase::LoggedOut;
                return Err(Error::protocol(format!("login rejected: {other:#04x}")));
            }
        }
        let keys = decode_text(&resp.data)?;
        if let Some(v) = text_value(&keys, "MaxRecvDataSegmentLength") {
            if let Ok(n) = v.parse::<usize>() {
                self.negotiated_max = self.cfg.max_recv_data_segment.min(n);
            }
        }
        self.phase = if discovery {
            Phase::Discovery
        } else {
            Phase::FullFeature
        };
        Ok(())
    }

    /// Asks a discovery session for the targets it serves; returns
    /// `(name, address)` pairs.
    pub fn discover(&mut self) -> Result<Vec<(String, String)>> {
        if self.phase != Phase::Discovery {
            return Err(Error::protocol("discovery requires a discovery session"));
        }
        let tag = self.fresh_tag();
        let mut bhs = Bhs::new(Opcode::TextRequest);
        bhs.initiator_task_tag = tag;
        bhs.cmd_sn = self.cmd_sn;
        let data = encode_text(&[("SendTargets".to_string(), "All".to_string())])?;
        self.ch.send_pdu(&Pdu::new(bhs, data))?;
        let resp = self.recv_expect(Opcode::TextResponse, tag)?;
        self.note_status(&resp)?;
        let keys = decode_text(&resp.data)?;
        let mut found = Vec::new();
        let mut name: Option<String> = None;
        for (k, v) in keys {
            match k.as_str() {
                "TargetName" => name = Some(v),
                "TargetAddress" => {
                    if let Some(n) = name.take() {
                        found.push((n, v));
                    }
                }
                _ => {}
            }
        }
        Ok(found)
    }

    /// Round-trips an empty ping.
    pub fn nop_ping(&mut self) -> Result<()> {
        self.ensure_full_feature()?;
        let tag = self.fresh_tag();
        let mut bhs = Bhs::new(Opcode::NopOut);
        bhs.initiator_task_tag = tag;
        bhs.cmd_sn = self.cmd_sn;
        self.ch.send_pdu(&Pdu::new(bhs, Vec::new()))?;
        let resp = self.recv_expect(Opcode::NopIn, tag)?;
        self.note_status(&resp)?;
        Ok(())
    }

    /// Writes whole blocks at `lba`. `data` must be a nonzero multiple of
    /// the block size and at most 65535 blocks.
    pub fn write(&mut self, lun: u64, lba: u32, data: &[u8]) -> Result<()> {
        self.ensure_full_feature()?;
        if data.is_empty() || !data.len().is_multiple_of(BLOCK_SIZE) {
            return Err(Error::invalid(format!(
                "write of {} bytes is not a whole number of {BLOCK_SIZE}-byte blocks",
                data.len()
            )));
        }
        let blocks = data.len() / BLOCK_SIZE;
        let blocks: u16 = blocks
            .try_into()
            .map_err(|_| Error::invalid(format!("{blocks} blocks exceeds one command")))?;
        let tag = self.fresh_tag();
        let mut bhs = Bhs::new(Opcode::ScsiCommand);
        bhs.initiator_task_tag = tag;
        bhs.lun = lun;
        bhs.cmd_sn = self.cmd_sn;
        self.cmd_sn = self.cmd_sn.wrapping_add(1);
        let cdb = encode_cdb(&Cdb {
            op: CdbOp::Write10,
            lba,
            blocks,
        })?;
        bhs.opcode_specific[..CDB_LEN].copy_from_slice(&cdb);
        self.ch.send_pdu(&Pdu::new(bhs, Vec::new()))?;

        // Data follows immediately, segmented to the negotiated limit.
        let chunks: Vec<&[u8]> = data.chunks(self.negotiated_max).collect();
        let last = chunks.len() - 1;
        for (i, chunk) in chunks.iter().enumerate() {
            let mut bhs = Bhs::new(Opcode::ScsiDataOut);
            bhs.initiator_task_tag = tag;
            bhs.lun = lun;
            bhs.final_flag = i == last;
            bhs.buffer_offset = (i * self.negotiated_max) as u32;
            bhs.cmd_sn = self.cmd_sn;
            self.ch.send_pdu(&Pdu::new(bhs, chunk.to_vec()))?;
        }

        let resp = self.recv_expect(Opcode::ScsiResponse, tag)?;
        self.note_status(&resp)?;
        self.check_scsi_status(&resp)
    }

    /// Reads whole blocks at `lba`, reassembling the Data-In stream.
    pub fn read(&mut self, lun: u64, lba: u32, blocks: u16) -> Result<Vec<u8>> {
        self.ensure_full_feature()?;
        let tag = self.fresh_tag();
        let mut bhs = Bhs::new(Opcode::ScsiCommand);
        bhs.initiator_task_tag = tag;
        bhs.lun = lun;
        bhs.cmd_sn = self.cmd_sn;
        self.cmd_sn = self.cmd_sn.wrapping_add(1);
        let cdb = encode_cdb(&Cdb {
            op: CdbOp::Read10,
            lba,
            blocks,
        })?;
        bhs.opcode_specific[..CDB_LEN].copy_from_slice(&cdb);
        self.ch.send_pdu(&Pdu::new(bhs, Vec::new()))?;

        let mut data = Vec::with_capacity(blocks as usize * BLOCK_SIZE);
        let mut saw_final = false;
        let resp = loop {
            let pdu = self.ch.recv_pdu()?;
            match pdu.bhs.opcode {
                Opcode::ScsiDataIn => {
                    if pdu.bhs.initiator_task_tag != tag {
                        return Err(Error::protocol("data for an unexpected task"));
                    }
                    if saw_final {
                        return Err(Error::protocol("data after the final segment"));
                    }
                    if pdu.bhs.buffer_offset as usize != data.len() {
                        return Err(Error::protocol(format!(
                            "data segment at offset {}, expected {}",
                            pdu.bhs.buffer_offset,
                            data.len()
                        )));
                    }
                    saw_final = pdu.bhs.final_flag;
                    data.extend_from_slice(&pdu.data);
                }
                Opcode::ScsiResponse => {
                    if pdu.bhs.initiator_task_tag != tag {
                        return Err(Error::protocol("response for an unexpected task"));
                    }
                    break pdu;
                }
                other => {
                    return Err(Error::protocol(format!(
                        "unexpected {other:?} during a read"
                    )))
                }
            }
        };
        self.note_status(&resp)?;
        self.check_scsi_status(&resp)?;
        if data.len() != blocks as usize * BLOCK_SIZE {
            return Err(Error::protocol(format!(
                "read returned {} bytes, expected {}",
                data.len(),
                blocks as usize * BLOCK_SIZE
            )));
        }
        Ok(data)
    }

    fn check_scsi_status(&self, resp: &Pdu) -> Result<()> {
        match resp.bhs.opcode_specific[0] {
            scsi_status::GOOD => Ok(()),
            status => Err(Error::Scsi {
                status,
                detail: String::from_utf8_lossy(&resp.data).into_owned(),
            }),
        }
    }

    /// Ends the session and closes the channel.
    pub fn logout(&mut self) -> Result<()> {
        match self.phase {
            Phase::Discovery | Phase::FullFeature => {}
            _ => return Err(Error::protocol("no session to log out of")),
        }
        let tag = self.fresh_tag();
        let mut bhs = Bhs::new(Opcode::LogoutRequest);
        bhs.initiator_task_tag = tag;
        bhs.cmd_sn = self.cmd_sn;
        self.ch.send_pdu(&Pdu::new(bhs, Vec::new()))?;
        let resp = self.recv_expect(Opcode::LogoutResponse, tag)?;
        self.note_status(&resp)?;
        self.phase = Phase::LoggedOut;
        self.ch.close()
    }
}
