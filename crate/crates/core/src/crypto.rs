//! Report protection: a keystream cipher and MAC built from the same
//! parameterized digest the program measures with.
//!
//! The digest in counter mode is the cipher; encrypt-then-MAC authenticates
//! the ciphertext. Both sides derive the key from program fields alone, so a
//! report can only be produced by a party holding the full program, and only
//! verified against the exact challenge that was issued.

use thiserror::Error;

use crate::codec::{DecodeError, EncodeError, Reader, Writer};
use crate::digest::{Digest, DigestParams, Hasher};
use crate::program::{decode_report, encode_report, MeasurementProgram, MeasurementReport};

const KEY_LABEL: &[u8] = b"SP2P-KEY";
const MAC_LABEL: &[u8] = b"SP2P-MAC";

/// Ciphertext plus authentication tag for one report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedReport {
    pub program_id: [u8; 16],
    pub ciphertext: Vec<u8>,
    pub mac: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("report does not reference the expected program")]
    ProgramMismatch,
    #[error("report authentication failed")]
    AuthFailure,
    #[error("authenticated report payload is malformed: {0}")]
    MalformedReport(#[from] DecodeError),
    #[error("inner report is bound to a different program")]
    Misbinding,
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// Shared key for one (program, node) pair.
pub fn derive_key(params: &DigestParams, seed: &[u8; 16], node_id: &str) -> Digest {
    let mut h = Hasher::new(params);
    h.update(seed);
    h.update(node_id.as_bytes());
    h.update(KEY_LABEL);
    h.finalize()
}

fn keystream_block(params: &DigestParams, key: &Digest, program_id: &[u8; 16], counter: u64) -> Digest {
    let mut h = Hasher::new(params);
    h.update(key);
    h.update(program_id);
    h.update(&counter.to_be_bytes());
    h.finalize()
}

fn apply_keystream(params: &DigestParams, key: &Digest, program_id: &[u8; 16], data: &mut [u8]) {
    for (i, chunk) in data.chunks_mut(16).enumerate() {
        let block = keystream_block(params, key, program_id, i as u64);
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}

fn mac(params: &DigestParams, key: &Digest, program_id: &[u8; 16], ciphertext: &[u8]) -> Digest {
    let mut h = Hasher::new(params);
    h.update(key);
    h.update(program_id);
    h.update(ciphertext);
    h.update(MAC_LABEL);
    h.finalize()
}

// Fold the whole comparison through XOR so the work done does not depend on
// where the first difference sits.
fn constant_order_eq(a: &Digest, b: &Digest) -> bool {
    a.iter().zip(b.iter()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Encrypt and authenticate a report under its program.
pub fn encrypt_report(
    program: &MeasurementProgram,
    report: &MeasurementReport,
) -> Result<EncryptedReport, CryptoError> {
    let key = derive_key(&program.params, &program.seed, &program.node_id);
    let mut ciphertext = encode_report(report)?;
    apply_keystream(&program.params, &key, &program.program_id, &mut ciphertext);
    let mac = mac(&program.params, &key, &program.program_id, &ciphertext);
    Ok(EncryptedReport {
        program_id: program.program_id,
        ciphertext,
        mac,
    })
}

/// Authenticate, decrypt, and decode a report against the issued program.
/// MAC verification comes first; nothing about an inauthentic payload is
/// interpreted.
pub fn decrypt_report(
    program: &MeasurementProgram,
    enc: &EncryptedReport,
) -> Result<MeasurementReport, CryptoError> {
    if enc.program_id != program.program_id {
        return Err(CryptoError::ProgramMismatch);
    }
    let key = derive_key(&program.params, &program.seed, &program.node_id);
    let expected = mac(&program.params, &key, &program.program_id, &enc.ciphertext);
    if !constant_order_eq(&expected, &enc.mac) {
        return Err(CryptoError::AuthFailure);
    }
    let mut plaintext = enc.ciphertext.clone();
    apply_keystream(&program.params, &key, &program.program_id, &mut plaintext);
    let report = decode_report(&plaintext)?;
    if report.program_id != program.program_id {
        return Err(CryptoError::Misbinding);
    }
    Ok(report)
}

impl EncryptedReport {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(36 + self.ciphertext.len());
        w.put_bytes(&self.program_id);
        w.put_u32(self.ciphertext.len() as u32);
        w.put_bytes(&self.ciphertext);
        w.put_bytes(&self.mac);
        w.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let program_id = r.array16("program_id")?;
        let ciphertext = r.bytes32("ciphertext")?.to_vec();
        let mac = r.array16("mac")?;
        r.finish("encrypted_report")?;
        Ok(Self {
            program_id,
            ciphertext,
            mac,
        })
    }
}
