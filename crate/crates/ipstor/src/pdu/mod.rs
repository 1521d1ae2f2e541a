//! iSCSI PDU codec.
//!
//! Every PDU on the wire is a fixed 48-byte Basic Header Segment (BHS)
//! followed by an optional data segment padded to a 4-byte boundary. All
//! multi-byte integers are big-endian. The BHS layout used here is the same
//! for every opcode:
//!
//! ```text
//! byte  0       opcode
//! byte  1       flags (bit 7 = final)
//! bytes 2..4    reserved, must be zero
//! byte  4       additional-header-segment length, must be zero
//! bytes 5..8    data segment length (24-bit)
//! bytes 8..16   logical unit number
//! bytes 16..20  initiator task tag
//! bytes 20..24  command sequence number
//! bytes 24..28  status sequence number
//! bytes 28..32  expected status sequence number
//! bytes 32..48  opcode-specific area (Read/Write commands carry the CDB
//!               here; Data-In/Data-Out carry the buffer offset in its
//!               first four bytes; responses carry a status in byte 0)
//! ```

pub mod cdb;
pub mod text;

pub use cdb::{decode_cdb, encode_cdb, Cdb, CdbOp, BLOCK_SIZE, CDB_LEN};
pub use text::{decode_text, encode_text};

use crate::error::{Error, Result};

/// Length of the Basic Header Segment.
pub const BHS_LEN: usize = 48;

/// Size of the opcode-specific area at the end of the BHS.
pub const OPCODE_SPECIFIC_LEN: usize = 16;

/// Largest data segment `decode_pdu` accepts by default. Protects stream
/// readers from absurd declared lengths; negotiation keeps real segments
/// far below this.
pub const DEFAULT_MAX_DATA_SEGMENT: usize = 1 << 20;

/// Hard wire-format ceiling for a data segment (24-bit length field).
pub const MAX_WIRE_DATA_SEGMENT: usize = 0xFF_FFFF;

/// PDU opcodes. Initiator-sent opcodes sit below 0x20, target-sent opcodes
/// at 0x20 and above; the two sets are disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    NopOut = 0x00,
    ScsiCommand = 0x01,
    LoginRequest = 0x03,
    TextRequest = 0x04,
    ScsiDataOut = 0x05,
    LogoutRequest = 0x06,
    NopIn = 0x20,
    ScsiResponse = 0x21,
    LoginResponse = 0x23,
    TextResponse = 0x24,
    ScsiDataIn = 0x25,
    LogoutResponse = 0x26,
}

impl Opcode {
    /// Maps a wire byte to an opcode, or `None` for unassigned values.
    pub fn from_u8(v: u8) -> Option<Opcode> {
        match v {
            0x00 => Some(Opcode::NopOut),
            0x01 => Some(Opcode::ScsiCommand),
            0x03 => Some(Opcode::LoginRequest),
            0x04 => Some(Opcode::TextRequest),
            0x05 => Some(Opcode::ScsiDataOut),
            0x06 => Some(Opcode::LogoutRequest),
            0x20 => Some(Opcode::NopIn),
            0x21 => Some(Opcode::ScsiResponse),
            0x23 => Some(Opcode::LoginResponse),
            0x24 => Some(Opcode::TextResponse),
            0x25 => Some(Opcode::ScsiDataIn),
            0x26 => Some(Opcode::LogoutResponse),
            _ => None,
        }
    }

    /// True for opcodes sent by the initiator.
    pub fn is_request(self) -> bool {
        (self as u8) < 0x20
    }

    /// True for opcodes sent by the target.
    pub fn is_response(self) -> bool {
        !self.is_request()
    }

    /// True for the two data-carrying transfer opcodes.
    pub fn is_data(self) -> bool {
        matches!(self, Opcode::ScsiDataIn | Opcode::ScsiDataOut)
    }

    /// All twelve assigned opcodes.
    pub fn all() -> [Opcode; 12] {
        [
            Opcode::NopOut,
            Opcode::ScsiCommand,
            Opcode::LoginRequest,
            Opcode::TextRequest,
            Opcode::ScsiDataOut,
            Opcode::LogoutRequest,
            Opcode::NopIn,
            Opcode::ScsiResponse,
            Opcode::LoginResponse,
            Opcode::TextResponse,
            Opcode::ScsiDataIn,
            Opcode::LogoutResponse,
        ]
    }
}

/// The fixed 48-byte Basic Header Segment, decoded.
///
/// `buffer_offset` is meaningful only for Data-In/Data-Out and is carried in
/// the first four bytes of the opcode-specific area on the wire; for those
/// opcodes a valid header keeps `opcode_specific[0..4]` zero, and for all
/// other opcodes a valid header keeps `buffer_offset` zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bhs {
    pub opcode: Opcode,
    pub final_flag: bool,
    pub data_segment_length: u32,
    pub lun: u64,
    pub initiator_task_tag: u32,
    pub cmd_sn: u32,
    pub stat_sn: u32,
    pub exp_stat_sn: u32,
    pub buffer_offset: u32,
    pub opcode_specific: [u8; OPCODE_SPECIFIC_LEN],
}

impl Bhs {
    /// A zeroed header for `opcode` with the final flag set.
    pub fn new(opcode: Opcode) -> Bhs {
        Bhs {
            opcode,
            final_flag: true,
            data_segment_length: 0,
            lun: 0,
            initiator_task_tag: 0,
            cmd_sn: 0,
            stat_sn: 0,
            exp_stat_sn: 0,
            buffer_offset: 0,
            opcode_specific: [0; OPCODE_SPECIFIC_LEN],
        }
    }
}

/// A full PDU: header plus unpadded data segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pdu {
    pub bhs: Bhs,
    pub data: Vec<u8>,
}

impl Pdu {
    /// Builds a PDU and sets the header's data-segment length from `data`.
    pub fn new(bhs: Bhs, data: Vec<u8>) -> Pdu {
        let mut bhs = bhs;
        bhs.data_segment_length = data.len() as u32;
        Pdu { bhs, data }
    }

    /// Total encoded length: header plus data padded to 4 bytes.
    pub fn wire_len(&self) -> usize {
        BHS_LEN + pad4(self.data.len())
    }

    /// Application (SCSI data) bytes this PDU carries: the data-segment
    /// length for Data-In/Data-Out, zero for control PDUs.
    pub fn data_payload_len(&self) -> usize {
        if self.bhs.opcode.is_data() {
            self.data.len()
        } else {
            0
        }
    }
}

/// Rounds `len` up to the next multiple of 4.
pub fn pad4(len: usize) -> usize {
    (len + 3) & !3
}

const FLAG_FINAL: u8 = 0x80;

/// Offset of the buffer-offset field inside the opcode-specific area for
/// data PDUs.
const SPECIFIC_BUFFER_OFFSET: usize = 0;

/// Encodes a PDU into its wire form.
///
/// The result length is always a multiple of 4 (data padded with zeros).
/// Fails with `InvalidArgument` if the declared data-segment length does
/// not match the data, the data exceeds the 24-bit length field, or the
/// buffer-offset aliasing rules are violated.
pub fn encode_pdu(pdu: &Pdu) -> Result<Vec<u8>> {
    let b = &pdu.bhs;
    if b.data_segment_length as usize != pdu.data.len() {
        return Err(Error::invalid(format!(
            "declared data segment length {} does not match data length {}",
            b.data_segment_length,
            pdu.data.len()
        )));
    }
    if pdu.data.len() > MAX_WIRE_DATA_SEGMENT {
        return Err(Error::invalid(format!(
            "data segment of {} bytes exceeds the 24-bit length field",
            pdu.data.len()
        )));
    }
    if b.opcode.is_data() {
        if b.opcode_specific[SPECIFIC_BUFFER_OFFSET..SPECIFIC_BUFFER_OFFSET + 4] != [0; 4] {
            return Err(Error::invalid(
                "opcode-specific bytes 0..4 carry the buffer offset for data PDUs \
                 and must be zero in the struct"
                    .to_string(),
            ));
        }
    } else if b.buffer_offset != 0 {
        return Err(Error::invalid(format!(
            "buffer_offset {} set on non-data opcode {:?}",
            b.buffer_offset, b.opcode
        )));
    }

    let mut out = vec![0u8; BHS_LEN + pad4(pdu.data.len())];
    out[0] = b.opcode as u8;
    out[1] = if b.final_flag { FLAG_FINAL } else { 0 };
    // bytes 2..4 reserved, byte 4 AHS length: already zero.
    let dsl = b.data_segment_length.to_be_bytes();
    out[5..8].copy_from_slice(&dsl[1..4]);
    out[8..16].copy_from_slice(&b.lun.to_be_bytes());
    out[16..20].copy_from_slice(&b.initiator_task_tag.to_be_bytes());
    out[20..24].copy_from_slice(&b.cmd_sn.to_be_bytes());
    out[24..28].copy_from_slice(&b.stat_sn.to_be_bytes());
    out[28..32].copy_from_slice(&b.exp_stat_sn.to_be_bytes());
    out[32..48].copy_from_slice(&b.opcode_specific);
    if b.opcode.is_data() {
        out[32..36].copy_from_slice(&b.buffer_offset.to_be_bytes());
    }
    out[BHS_LEN..BHS_LEN + pdu.data.len()].copy_from_slice(&pdu.data);
    Ok(out)
}

/// Decodes one PDU from the front of `buf`.
///
/// Returns the PDU and the number of bytes consumed (always a multiple of
/// 4); bytes past the declared frame are never read. Returns
/// [`Error::Incomplete`] when `buf` holds less than one full frame and
/// [`Error::Protocol`] for unassigned opcodes, nonzero reserved/AHS bytes,
/// nonzero padding, or a declared data length above `max_data_segment`.
pub fn decode_pdu(buf: &[u8], max_data_segment: usize) -> Result<(Pdu, usize)> {
    if buf.len() < BHS_LEN {
        return Err(Error::Incomplete {
            needed: BHS_LEN - buf.len(),
        });
    }
    let opcode = Opcode::from_u8(buf[0])
        .ok_or_else(|| Error::protocol(format!("unassigned opcode {:#04x}", buf[0])))?;
    if buf[1] & !FLAG_FINAL != 0 {
        return Err(Error::protocol(format!(
            "reserved flag bits set: {:#04x}",
            buf[1]
        )));
    }
    if buf[2] != 0 || buf[3] != 0 {
        return Err(Error::protocol("reserved header bytes 2..4 not zero"));
    }
    if buf[4] != 0 {
        return Err(Error::protocol(format!(
            "nonzero additional-header-segment length {}",
            buf[4]
        )));
    }
    let dsl = u32::from_be_bytes([0, buf[5], buf[6], buf[7]]) as usize;
    if dsl > max_data_segment {
        return Err(Error::protocol(format!(
            "declared data segment length {dsl} exceeds limit {max_data_segment}"
        )));
    }
    let total = BHS_LEN + pad4(dsl);
    if buf.len() < total {
        return Err(Error::Incomplete {
            needed: total - buf.len(),
        });
    }
    for &b in &buf[BHS_LEN + dsl..total] {
        if b != 0 {
            return Err(Error::protocol("nonzero padding byte"));
        }
    }

    let mut opcode_specific = [0u8; OPCODE_SPECIFIC_LEN];
    opcode_specific.copy_from_slice(&buf[32..48]);
    let mut buffer_offset = 0;
    if opcode.is_data() {
        buffer_offset = u32::from_be_bytes([buf[32], buf[33], buf[34], buf[35]]);
        opcode_specific[SPECIFIC_BUFFER_OFFSET..SPECIFIC_BUFFER_OFFSET + 4].fill(0);
    }

    let bhs = Bhs {
        opcode,
        final_flag: buf[1] & FLAG_FINAL != 0,
        data_segment_length: dsl as u32,
        lun: u64::from_be_bytes(buf[8..16].try_into().unwrap()),
        initiator_task_tag: u32::from_be_bytes(buf[16..20].try_into().unwrap()),
        cmd_sn: u32::from_be_bytes(buf[20..24].try_into().unwrap()),
        stat_sn: u32::from_be_bytes(buf[24..28].try_into().unwrap()),
        exp_stat_sn: u32::from_be_bytes(buf[28..32].try_into().unwrap()),
        buffer_offset,
        opcode_specific,
    };
    let pdu = Pdu {
        bhs,
        data: buf[BHS_LEN..BHS_LEN + dsl].to_vec(),
    };
    Ok((pdu, total))
}

/// SCSI status carried in byte 0 of a response's opcode-specific area.
pub mod scsi_status {
    pub const GOOD: u8 = 0x00;
    pub const CHECK_CONDITION: u8 = 0x02;
}

/// Login status carried in byte 0 of a login response's opcode-specific area.
pub mod login_status {
    pub const SUCCESS: u8 = 0x00;
    pub const AUTH_FAILURE: u8 = 0x02;
    pub const UNKNOWN_TARGET: u8 = 0x03;
    pub const REJECT: u8 = 0x05;
}

/// One-line human summary of a PDU, in capture-display style. The trace
/// analyzer classifies command and status frames by these shapes, so the
/// prefixes here are load-bearing (see `trace::rtt_series`).
pub fn pdu_summary(pdu: &Pdu) -> String {
    let b = &pdu.bhs;
    match b.opcode {
        Opcode::NopOut => "NOP Out".to_string(),
        Opcode::NopIn => "NOP In".to_string(),
        Opcode::ScsiCommand => match decode_cdb(&b.opcode_specific[..CDB_LEN]) {
            Ok(cdb) => {
                let verb = match cdb.op {
                    CdbOp::Read10 => "Read(10)",
                    CdbOp::Write10 => "Write(10)",
                };
                format!(
                    "SCSI: {verb} LUN: {:#04x} (LBA: {:#010x}, Len: {})",
                    b.lun, cdb.lba, cdb.blocks
                )
            }
            Err(_) => format!("SCSI: Command LUN: {:#04x}", b.lun),
        },
        Opcode::ScsiResponse => {
            let status = match b.opcode_specific[0] {
                scsi_status::GOOD => "Good",
                scsi_status::CHECK_CONDITION => "Check Condition",
                _ => "Other",
            };
            format!("SCSI: Response LUN: {:#04x} ({status})", b.lun)
        }
        Opcode::ScsiDataIn => format!("SCSI: Data In LUN: {:#04x}", b.lun),
        Opcode::ScsiDataOut => format!("SCSI: Data Out LUN: {:#04x}", b.lun),
        Opcode::LoginRequest => "Login Command".to_string(),
        Opcode::LoginResponse => match b.opcode_specific[0] {
            login_status::SUCCESS => "Login Response (Success)".to_string(),
            s => format!("Login Response (Reject, {s:#04x})"),
        },
        Opcode::TextRequest => "Text Command".to_string(),
        Opcode::TextResponse => "Text Response".to_string(),
        Opcode::LogoutRequest => "Logout Command".to_string(),
        Opcode::LogoutResponse => "Logout Response".to_string(),
    }
}
