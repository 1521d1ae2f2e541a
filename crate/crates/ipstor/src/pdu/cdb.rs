//! SCSI command descriptor blocks.
//!
//! Only the two 10-byte block commands are supported: Read(10) 0x28 and
//! Write(10) 0x2A. Layout: opcode at byte 0, 32-bit LBA at bytes 2..6,
//! 16-bit transfer length in blocks at bytes 7..9, all big-endian; bytes
//! 1, 6 and 9 are reserved-zero.

use crate::error::{Error, Result};

/// Logical block size in bytes. Every transfer length is a multiple of this.
pub const BLOCK_SIZE: usize = 512;

/// Wire length of a command descriptor block.
pub const CDB_LEN: usize = 10;

/// Supported block-command opcodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CdbOp {
    Read10 = 0x28,
    Write10 = 0x2A,
}

/// A decoded 10-byte read/write command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cdb {
    pub op: CdbOp,
    pub lba: u32,
    pub blocks: u16,
}

/// Encodes a CDB to its 10-byte wire form. `blocks` must be at least 1.
pub fn encode_cdb(cdb: &Cdb) -> Result<[u8; CDB_LEN]> {
    if cdb.blocks == 0 {
        return Err(Error::invalid("transfer length of zero blocks"));
    }
    let mut out = [0u8; CDB_LEN];
    out[0] = cdb.op as u8;
    out[2..6].copy_from_slice(&cdb.lba.to_be_bytes());
    out[7..9].copy_from_slice(&cdb.blocks.to_be_bytes());
    Ok(out)
}

/// Decodes a 10-byte CDB. Unassigned opcodes, short input, nonzero
/// reserved bytes, and zero-block transfers are protocol errors.
pub fn decode_cdb(bytes: &[u8]) -> Result<Cdb> {
    if bytes.len() < CDB_LEN {
        return Err(Error::Incomplete {
            needed: CDB_LEN - bytes.len(),
        });
    }
    let op = match bytes[0] {
        0x28 => CdbOp::Read10,
        0x2A => CdbOp::Write10,
        other => {
            return Err(Error::protocol(format!(
                "unsupported CDB opcode {other:#04x}"
            )))
        }
    };
    if bytes[1] != 0 || bytes[6] != 0 || bytes[9] != 0 {
        return Err(Error::protocol("nonzero reserved CDB byte"));
    }
    let lba = u32::from_be_bytes(bytes[2..6].try_into().unwrap());
    let blocks = u16::from_be_bytes(bytes[7..9].try_into().unwrap());
    if blocks == 0 {
        return Err(Error::protocol("transfer length of zero blocks"));
    }
    Ok(Cdb { op, lba, blocks })
}
