//! Login/Text key-value segments.
//!
//! Negotiation parameters travel as `key=value` pairs, each terminated by a
//! NUL byte, concatenated in order. Keys must be nonempty and contain
//! neither `=` nor NUL; values may contain `=` but not NUL (the split is at
//! the first `=`).

use crate::error::{Error, Result};

/// Encodes key-value pairs to their wire form.
pub fn encode_text(pairs: &[(String, String)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (k, v) in pairs {
        if k.is_empty() {
            return Err(Error::invalid("empty text key"));
        }
        if k.contains('=') || k.contains('\0') {
            return Err(Error::invalid(format!("malformed text key {k:?}")));
        }
        if v.contains('\0') {
            return Err(Error::invalid(format!("NUL in text value for key {k:?}")));
        }
        out.extend_from_slice(k.as_bytes());
        out.push(b'=');
        out.extend_from_slice(v.as_bytes());
        out.push(0);
    }
    Ok(out)
}

/// Decodes a text segment into its key-value pairs, preserving order.
/// An empty segment yields an empty list.
pub fn decode_text(bytes: &[u8]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let nul = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| Error::protocol("text pair missing terminating NUL"))?;
        let entry = std::str::from_utf8(&rest[..nul])
            .map_err(|_| Error::protocol("text pair is not valid UTF-8"))?;
        let eq = entry
            .find('=')
            .ok_or_else(|| Error::protocol(format!("text pair {entry:?} missing '='")))?;
        if eq == 0 {
            return Err(Error::protocol("text pair with empty key"));
        }
        pairs.push((entry[..eq].to_string(), entry[eq + 1..].to_string()));
        rest = &rest[nul + 1..];
    }
    Ok(pairs)
}

/// Returns the value of the first pair with key `key`, if any.
pub fn text_value<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}
