//! Byte-level encoding helpers shared by the program, report, and wire codecs.
//!
//! All multi-byte integers are big-endian. Strings are length-prefixed UTF-8.
//! Decoding is strict: every length must fit in the remaining input and
//! errors name the field that failed.

use thiserror::Error;

/// Decoding failure. The `&'static str` payloads name the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated input while reading {0}")]
    Truncated(&'static str),
    #[error("unknown version byte {0:#04x}")]
    UnknownVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("invalid value {value:#04x} for {field}")]
    InvalidValue { field: &'static str, value: u8 },
    #[error("invalid utf-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("{len} trailing bytes after {after}")]
    Trailing { after: &'static str, len: usize },
}

/// Encoding failure: a variable-length field does not fit its length prefix.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field} length {len} exceeds the wire limit of {max}")]
pub struct EncodeError {
    pub field: &'static str,
    pub len: usize,
    pub max: usize,
}

/// Append-only writer over a `Vec<u8>`.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self {
            buf: Vec::with_capacity(cap),
        }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn put_bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// 8-bit length prefix + raw bytes.
    pub fn put_bytes8(&mut self, field: &'static str, v: &[u8]) -> Result<(), EncodeError> {
        let len = check_len(field, v.len(), u8::MAX as usize)?;
        self.put_u8(len as u8);
        self.put_bytes(v);
        Ok(())
    }

    /// 16-bit length prefix + raw bytes.
    pub fn put_bytes16(&mut self, field: &'static str, v: &[u8]) -> Result<(), EncodeError> {
        let len = check_len(field, v.len(), u16::MAX as usize)?;
        self.put_u16(len as u16);
        self.put_bytes(v);
        Ok(())
    }

    /// 16-bit length prefix + UTF-8 bytes.
    pub fn put_str16(&mut self, field: &'static str, v: &str) -> Result<(), EncodeError> {
        self.put_bytes16(field, v.as_bytes())
    }

    /// 32-bit length prefix + raw bytes.
    pub fn put_bytes32(&mut self, field: &'static str, v: &[u8]) -> Result<(), EncodeError> {
        let len = check_len(field, v.len(), u32::MAX as usize)?;
        self.put_u32(len as u32);
        self.put_bytes(v);
        Ok(())
    }

    /// 16-bit element count, for list headers.
    pub fn put_count16(&mut self, field: &'static str, n: usize) -> Result<(), EncodeError> {
        let n = check_len(field, n, u16::MAX as usize)?;
        self.put_u16(n as u16);
        Ok(())
    }
}

fn check_len(field: &'static str, len: usize, max: usize) -> Result<usize, EncodeError> {
    if len > max {
        Err(EncodeError { field, len, max })
    } else {
        Ok(len)
    }
}

/// Cursor over an input slice with field-labelled reads.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated(field));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self, field: &'static str) -> Result<u8, DecodeError> {
        Ok(self.take(1, field)?[0])
    }

    pub fn u16(&mut self, field: &'static str) -> Result<u16, DecodeError> {
        let b = self.take(2, field)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self, field: &'static str) -> Result<u32, DecodeError> {
        let b = self.take(4, field)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self, field: &'static str) -> Result<u64, DecodeError> {
        let b = self.take(8, field)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(u64::from_be_bytes(arr))
    }

    pub fn array16(&mut self, field: &'static str) -> Result<[u8; 16], DecodeError> {
        let b = self.take(16, field)?;
        let mut arr = [0u8; 16];
        arr.copy_from_slice(b);
        Ok(arr)
    }

    /// 8-bit length prefix + raw bytes.
    pub fn bytes8(&mut self, field: &'static str) -> Result<&'a [u8], DecodeError> {
        let len = self.u8(field)? as usize;
        self.take(len, field)
    }

    /// 16-bit length prefix + raw bytes.
    pub fn bytes16(&mut self, field: &'static str) -> Result<&'a [u8], DecodeError> {
        let len = self.u16(field)? as usize;
        self.take(len, field)
    }

    /// 32-bit length prefix + raw bytes.
    pub fn bytes32(&mut self, field: &'static str) -> Result<&'a [u8], DecodeError> {
        let len = self.u32(field)? as usize;
        self.take(len, field)
    }

    /// 16-bit length prefix + UTF-8 string.
    pub fn str16(&mut self, field: &'static str) -> Result<String, DecodeError> {
        let raw = self.bytes16(field)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| DecodeError::InvalidUtf8(field))
    }

    /// Error unless the input was fully consumed.
    pub fn finish(self, after: &'static str) -> Result<(), DecodeError> {
        if self.remaining() != 0 {
            Err(DecodeError::Trailing {
                after,
                len: self.remaining(),
            })
        } else {
            Ok(())
        }
    }
}
