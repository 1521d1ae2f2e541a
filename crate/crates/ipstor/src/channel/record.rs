//! Record-layer channel security (stream-level, SSL-style).
//!
//! The byte stream is cut into records of at most 16 KiB plaintext. Each
//! record is a 5-byte header — content type, 2-byte version, 2-byte length
//! of everything after the header — followed by ciphertext of the same
//! length as the plaintext and a 16-byte tag, so a record costs exactly 21
//! bytes of overhead. The record stream then rides inside ordinary
//! pseudo-TCP packets.

use crate::channel::crypto::{seq_nonce, SealKey, TAG_LEN};
use crate::error::{Error, Result};

/// Largest plaintext one record may carry.
pub const RECORD_MAX_PLAINTEXT: usize = 16_384;

/// Record header length.
pub const RECORD_HEADER_LEN: usize = 5;

/// Fixed per-record overhead: header plus tag.
pub const RECORD_OVERHEAD: usize = RECORD_HEADER_LEN + TAG_LEN;

/// Content type for application data records.
pub const CONTENT_APP_DATA: u8 = 23;

/// Wire version tag carried in every record header.
pub const RECORD_VERSION: u16 = 0x0300;

const NONCE_DOMAIN: [u8; 4] = *b"rec0";

/// Sealing side of one direction of a record channel.
pub struct RecordSealer {
    key: SealKey,
    seq: u64,
}

impl RecordSealer {
    pub fn new(key: &[u8; 32]) -> RecordSealer {
        RecordSealer {
            key: SealKey::new(key),
            seq: 0,
        }
    }

    /// Seals one record. `plaintext` must not exceed
    /// [`RECORD_MAX_PLAINTEXT`]; the result is exactly
    /// `plaintext.len() + RECORD_OVERHEAD` bytes.
    pub fn seal_record(&mut self, plaintext: &[u8]) -> Result<Vec<u8>> {
        if plaintext.len() > RECORD_MAX_PLAINTEXT {
            return Err(Error::invalid(format!(
                "record plaintext of {} bytes exceeds the {RECORD_MAX_PLAINTEXT}-byte limit",
                plaintext.len()
            )));
        }
        let body_len = plaintext.len() + TAG_LEN;
        let mut out = vec![0u8; RECORD_HEADER_LEN];
        out[0] = CONTENT_APP_DATA;
        out[1..3].copy_from_slice(&RECORD_VERSION.to_be_bytes());
        out[3..5].copy_from_slice(&(body_len as u16).to_be_bytes());
        let header = [out[0], out[1], out[2], out[3], out[4]];
        let nonce = seq_nonce(NONCE_DOMAIN, self.seq);
        self.seq += 1;
        out.extend_from_slice(&self.key.seal(&nonce, &header, plaintext));
        Ok(out)
    }

    /// Splits `stream` into maximal records and seals each in order.
    pub fn seal_stream(&mut self, stream: &[u8]) -> Result<Vec<Vec<u8>>> {
        stream
            .chunks(RECORD_MAX_PLAINTEXT)
            .map(|c| self.seal_record(c))
            .collect()
    }
}

/// Opening side of one direction of a record channel.
pub struct RecordOpener {
    key: SealKey,
    seq: u64,
}

impl RecordOpener {
    pub fn new(key: &[u8; 32]) -> RecordOpener {
        RecordOpener {
            key: SealKey::new(key),
            seq: 0,
        }
    }

    /// Opens the record at the front of `buf`, returning its plaintext and
    /// the number of wire bytes consumed. `Incomplete` means more stream
    /// bytes are needed; any tampering surfaces as `Integrity`.
    pub fn open_record(&mut self, buf: &[u8]) -> Result<(Vec<u8>, usize)> {
        let total = record_len(buf)?;
        if buf.len() < total {
            return Err(Error::Incomplete {
                needed: total - buf.len(),
            });
        }
        let header: [u8; RECORD_HEADER_LEN] = buf[..RECORD_HEADER_LEN].try_into().unwrap();
        let nonce = seq_nonce(NONCE_DOMAIN, self.seq);
        let plaintext = self
            .key
            .open(&nonce, &header, &buf[RECORD_HEADER_LEN..total])?;
        self.seq += 1;
        Ok((plaintext, total))
    }
}

/// Total wire length of the record at the front of `buf`, validating the
/// header. `Incomplete` until the 5 header bytes are buffered.
pub fn record_len(buf: &[u8]) -> Result<usize> {
    if buf.len() < RECORD_HEADER_LEN {
        return Err(Error::Incomplete {
            needed: RECORD_HEADER_LEN - buf.len(),
        });
    }
    if buf[0] != CONTENT_APP_DATA {
        return Err(Error::protocol(format!(
            "unknown record content type {:#04x}",
            buf[0]
        )));
    }
    if u16::from_be_bytes([buf[1], buf[2]]) != RECORD_VERSION {
        return Err(Error::protocol("unknown record version"));
    }
    let body_len = u16::from_be_bytes([buf[3], buf[4]]) as usize;
    if !(TAG_LEN..=RECORD_MAX_PLAINTEXT + TAG_LEN).contains(&body_len) {
        return Err(Error::protocol(format!(
            "implausible record body length {body_len}"
        )));
    }
    Ok(RECORD_HEADER_LEN + body_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair() -> (RecordSealer, RecordOpener) {
        let key = [0x42u8; 32];
        (RecordSealer::new(&key), RecordOpener::new(&key))
    }

    #[test]
    fn hundred_bytes_seal_to_121() {
        let (mut s, mut o) = pair();
        let record = s.seal_record(&[7u8; 100]).unwrap();
        assert_eq!(record.len(), 121);
        let (pt, used) = o.open_record(&record).unwrap();
        assert_eq!(used, 121);
        assert_eq!(pt, vec![7u8; 100]);
    }

    #[test]
    fn max_plaintext_accepted_one_over_rejected() {
        let (mut s, _) = pair();
        let record = s.seal_record(&vec![0u8; RECORD_MAX_PLAINTEXT]).unwrap();
        assert_eq!(record.len(), RECORD_MAX_PLAINTEXT + RECORD_OVERHEAD);
        assert!(matches!(
            s.seal_record(&vec![0u8; RECORD_MAX_PLAINTEXT + 1]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn tampered_record_fails_integrity() {
        let (mut s, mut o) = pair();
        let mut record = s.seal_record(b"secret payload").unwrap();
        let mid = record.len() / 2;
        record[mid] ^= 0x01;
        assert!(matches!(o.open_record(&record), Err(Error::Integrity(_))));
    }

    #[test]
    fn truncated_record_is_incomplete() {
        let (mut s, mut o) = pair();
        let record = s.seal_record(b"0123456789").unwrap();
        match o.open_record(&record[..record.len() - 3]) {
            Err(Error::Incomplete { needed: 3 }) => {}
            other => panic!("expected 3 bytes needed, got {other:?}"),
        }
    }

    #[test]
    fn stream_of_records_opens_in_order() {
        let (mut s, mut o) = pair();
        let mut wire = Vec::new();
        for msg in [b"one".as_ref(), b"two", b"three"] {
            wire.extend_from_slice(&s.seal_record(msg).unwrap());
        }
        let mut got = Vec::new();
        let mut off = 0;
        while off < wire.len() {
            let (pt, used) = o.open_record(&wire[off..]).unwrap();
            got.push(pt);
            off += used;
        }
        assert_eq!(got, vec![b"one".to_vec(), b"two".to_vec(), b"three".to_vec()]);
    }

    proptest! {
        #[test]
        fn round_trip(payload in prop::collection::vec(any::<u8>(), 0..4096)) {
            let (mut s, mut o) = pair();
            let record = s.seal_record(&payload).unwrap();
            prop_assert_eq!(record.len(), payload.len() + RECORD_OVERHEAD);
            let (pt, used) = o.open_record(&record).unwrap();
            prop_assert_eq!(used, record.len());
            prop_assert_eq!(pt, payload);
        }
    }
}
