//! Framed wire format: a u32 big-endian payload length, one type byte, then
//! the payload. Everything multi-byte on the wire is big-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codec::{DecodeError, EncodeError, Reader, Writer};
use crate::crypto::EncryptedReport;
use crate::program::{decode_program, encode_program, MeasurementProgram};

/// Default TCP port for the check protocol.
pub const DEFAULT_PORT: u16 = 7413;

/// Largest frame either side will read.
pub const DEFAULT_MAX_FRAME: usize = 16 * 1024 * 1024;

/// Protocol version a client announces in its check-in.
pub const CLIENT_VERSION: u16 = 1;

const TYPE_AUTOCHECK_REQ: u8 = 0x01;
const TYPE_PROGRAM: u8 = 0x02;
const TYPE_REPORT: u8 = 0x03;
const TYPE_STATUS: u8 = 0x04;
const TYPE_RESOURCE_REQ: u8 = 0x05;
const TYPE_RESOURCE_RESP: u8 = 0x06;

/// Why a check concluded the way it did; byte values are wire format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ReasonCode {
    None = 0,
    Malformed = 1,
    UnknownChallenge = 2,
    Replay = 3,
    Expired = 4,
    AuthFail = 5,
    MalformedReport = 6,
    DigestMismatch = 7,
    NodeMismatch = 8,
}

impl ReasonCode {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::None,
            1 => Self::Malformed,
            2 => Self::UnknownChallenge,
            3 => Self::Replay,
            4 => Self::Expired,
            5 => Self::AuthFail,
            6 => Self::MalformedReport,
            7 => Self::DigestMismatch,
            8 => Self::NodeMismatch,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "OK",
            Self::Malformed => "MALFORMED",
            Self::UnknownChallenge => "UNKNOWN_CHALLENGE",
            Self::Replay => "REPLAY",
            Self::Expired => "EXPIRED",
            Self::AuthFail => "AUTH_FAIL",
            Self::MalformedReport => "MALFORMED_REPORT",
            Self::DigestMismatch => "DIGEST_MISMATCH",
            Self::NodeMismatch => "NODE_MISMATCH",
        }
    }
}

impl std::fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One protocol message, either direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    /// Node asks to be checked.
    AutocheckRequest { node_id: String, client_version: u16 },
    /// Server answers with a freshly generated program.
    Program(MeasurementProgram),
    /// Node returns its encrypted report.
    Report(EncryptedReport),
    /// Server's verdict on one program.
    Status {
        program_id: [u8; 16],
        passed: bool,
        reason: ReasonCode,
    },
    /// Node asks for a shared resource.
    ResourceRequest { node_id: String, resource_id: String },
    /// Server grants (with payload) or denies.
    ResourceResponse { granted: bool, payload: Vec<u8> },
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::AutocheckRequest { .. } => "AUTOCHECK_REQ",
            Self::Program(_) => "PROGRAM",
            Self::Report(_) => "REPORT",
            Self::Status { .. } => "STATUS",
            Self::ResourceRequest { .. } => "RESOURCE_REQ",
            Self::ResourceResponse { .. } => "RESOURCE_RESP",
        }
    }

    fn type_byte(&self) -> u8 {
        match self {
            Self::AutocheckRequest { .. } => TYPE_AUTOCHECK_REQ,
            Self::Program(_) => TYPE_PROGRAM,
            Self::Report(_) => TYPE_REPORT,
            Self::Status { .. } => TYPE_STATUS,
            Self::ResourceRequest { .. } => TYPE_RESOURCE_REQ,
            Self::ResourceResponse { .. } => TYPE_RESOURCE_RESP,
        }
    }

    fn encode_payload(&self) -> Result<Vec<u8>, EncodeError> {
        match self {
            Self::AutocheckRequest {
                node_id,
                client_version,
            } => {
                let mut w = Writer::with_capacity(4 + node_id.len());
                w.put_str16("node_id", node_id)?;
                w.put_u16(*client_version);
                Ok(w.into_bytes())
            }
            Self::Program(p) => encode_program(p),
            Self::Report(r) => Ok(r.encode()),
            Self::Status {
                program_id,
                passed,
                reason,
            } => {
                let mut w = Writer::with_capacity(18);
                w.put_bytes(program_id);
                w.put_u8(u8::from(*passed));
                w.put_u8(*reason as u8);
                Ok(w.into_bytes())
            }
            Self::ResourceRequest {
                node_id,
                resource_id,
            } => {
                let mut w = Writer::with_capacity(4 + node_id.len() + resource_id.len());
                w.put_str16("node_id", node_id)?;
                w.put_str16("resource_id", resource_id)?;
                Ok(w.into_bytes())
            }
            Self::ResourceResponse { granted, payload } => {
                let mut w = Writer::with_capacity(5 + payload.len());
                w.put_u8(u8::from(*granted));
                w.put_bytes32("payload", payload)?;
                Ok(w.into_bytes())
            }
        }
    }

    fn decode_payload(type_byte: u8, payload: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(payload);
        let msg = match type_byte {
            TYPE_AUTOCHECK_REQ => {
                let node_id = r.str16("node_id")?;
                let client_version = r.u16("client_version")?;
                Self::AutocheckRequest {
                    node_id,
                    client_version,
                }
            }
            TYPE_PROGRAM => return decode_program(payload).map(Self::Program),
            TYPE_REPORT => return EncryptedReport::decode(payload).map(Self::Report),
            TYPE_STATUS => {
                let program_id = r.array16("program_id")?;
                let status = r.u8("status")?;
                if status > 1 {
                    return Err(DecodeError::InvalidValue {
                        field: "status",
                        value: status,
                    });
                }
                let reason_byte = r.u8("reason")?;
                let reason =
                    ReasonCode::from_byte(reason_byte).ok_or(DecodeError::InvalidValue {
                        field: "reason",
                        value: reason_byte,
                    })?;
                Self::Status {
                    program_id,
                    passed: status == 1,
                    reason,
                }
            }
            TYPE_RESOURCE_REQ => {
                let node_id = r.str16("node_id")?;
                let resource_id = r.str16("resource_id")?;
                Self::ResourceRequest {
                    node_id,
                    resource_id,
                }
            }
            TYPE_RESOURCE_RESP => {
                let status = r.u8("status")?;
                if status > 1 {
                    return Err(DecodeError::InvalidValue {
                        field: "status",
                        value: status,
                    });
                }
                let payload = r.bytes32("payload")?.to_vec();
                Self::ResourceResponse {
                    granted: status == 1,
                    payload,
                }
            }
            other => return Err(DecodeError::UnknownType(other)),
        };
        r.finish("message")?;
        Ok(msg)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {len} bytes exceeds the {max} byte limit")]
    FrameTooLarge { len: usize, max: usize },
    #[error("malformed frame: {0}")]
    Decode(#[from] DecodeError),
    #[error("unencodable message: {0}")]
    Encode(#[from] EncodeError),
}

impl ProtocolError {
    /// True for read timeouts, as opposed to hard transport failures.
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            ProtocolError::Io(e)
                if e.kind() == io::ErrorKind::WouldBlock || e.kind() == io::ErrorKind::TimedOut
        )
    }
}

/// Read one framed message. A clean EOF before any length byte yields
/// `Ok(None)`; EOF inside a frame is an error. Frames whose declared length
/// exceeds `max_frame` are rejected before any payload allocation.
pub fn read_message<R: Read>(
    r: &mut R,
    max_frame: usize,
) -> Result<Option<WireMessage>, ProtocolError> {
    let mut len_bytes = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = r.read(&mut len_bytes[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "connection closed inside a frame header",
            )
            .into());
        }
        filled += n;
    }
    let len = u32::from_be_bytes(len_bytes) as usize;
    if len > max_frame {
        return Err(ProtocolError::FrameTooLarge {
            len,
            max: max_frame,
        });
    }
    let mut type_byte = [0u8; 1];
    r.read_exact(&mut type_byte)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(WireMessage::decode_payload(type_byte[0], &payload)?))
}

/// Write one framed message as a single buffered write.
pub fn write_message<W: Write>(w: &mut W, msg: &WireMessage) -> Result<(), ProtocolError> {
    let payload = msg.encode_payload()?;
    let mut frame = Vec::with_capacity(5 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.push(msg.type_byte());
    frame.extend_from_slice(&payload);
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}
