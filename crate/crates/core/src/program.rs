//! Per-request measurement programs: generation, wire codec, and execution.
//!
//! A [`MeasurementProgram`] is the data-driven equivalent of a server-composed
//! checker class: freshly drawn digest parameters, salts, a key seed, and the
//! list of artifacts to measure. The issuing server and the measured node both
//! run [`execute_program`] over their own bytes; verification is then plain
//! equality of the resulting digest lists.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::path::{Component, Path, PathBuf};

use rand::RngCore;
use thiserror::Error;

use crate::codec::{DecodeError, EncodeError, Reader, Writer};
use crate::digest::{Digest, DigestParams, Hasher};
use crate::par;

/// Wire format version for encoded programs.
pub const PROGRAM_WIRE_VERSION: u8 = 0x01;

/// Environment properties collected by default alongside artifact digests.
/// They are logged, never compared.
pub const DEFAULT_ENV_PROPS: [&str; 3] = ["runtime.name", "runtime.version", "os.name"];

/// Value reported for an environment property the node cannot resolve.
pub const ENV_UNAVAILABLE: &str = "unavailable";

/// Identity of a protected artifact within a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArtifactId {
    pub id: String,
    pub version: String,
}

impl ArtifactId {
    pub fn new(id: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            version: version.into(),
        }
    }
}

impl fmt::Display for ArtifactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.id, self.version)
    }
}

/// A single-use measurement challenge issued to one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementProgram {
    pub program_id: [u8; 16],
    pub node_id: String,
    pub issued_at: u64,
    pub ttl_seconds: u32,
    pub params: DigestParams,
    pub seed: [u8; 16],
    pub salt_prefix: Vec<u8>,
    pub salt_suffix: Vec<u8>,
    pub targets: Vec<ArtifactId>,
    pub env_props: Vec<String>,
}

impl MeasurementProgram {
    /// Deadline after which the challenge no longer verifies.
    pub fn expires_at(&self) -> u64 {
        self.issued_at.saturating_add(self.ttl_seconds as u64)
    }
}

/// What a node measured under one program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementReport {
    pub program_id: [u8; 16],
    pub node_id: String,
    pub artifact_digests: Vec<(ArtifactId, Digest)>,
    pub env_values: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("refusing to generate a program with no measurement targets")]
    NoTargets,
    #[error("program ttl must be positive")]
    ZeroTtl,
}

/// Generate a fresh program, drawing every random field from `rng`.
///
/// Draw order is fixed and part of the contract: program_id (16 bytes), seed
/// (16 bytes), then digest params as iv words 0..4 (big-endian u32 each),
/// round masks 0..64, out mask (16 bytes) — redrawn wholesale in the unlucky
/// case they come out as the identity parameterization — then the prefix salt
/// (one length byte, rejection-sampled to land uniformly in 8..=32, followed
/// by that many bytes) and the suffix salt the same way.
pub fn generate_program(
    node_id: &str,
    targets: &[ArtifactId],
    env_props: &[String],
    now: u64,
    ttl_seconds: u32,
    rng: &mut dyn RngCore,
) -> Result<MeasurementProgram, GenerateError> {
    if targets.is_empty() {
        return Err(GenerateError::NoTargets);
    }
    if ttl_seconds == 0 {
        return Err(GenerateError::ZeroTtl);
    }

    let mut program_id = [0u8; 16];
    rng.fill_bytes(&mut program_id);
    let mut seed = [0u8; 16];
    rng.fill_bytes(&mut seed);

    let params = loop {
        let p = draw_params(rng);
        if !p.is_identity() {
            break p;
        }
    };

    let salt_prefix = draw_salt(rng);
    let salt_suffix = draw_salt(rng);

    Ok(MeasurementProgram {
        program_id,
        node_id: node_id.to_owned(),
        issued_at: now,
        ttl_seconds,
        params,
        seed,
        salt_prefix,
        salt_suffix,
        targets: targets.to_vec(),
        env_props: env_props.to_vec(),
    })
}

fn draw_params(rng: &mut dyn RngCore) -> DigestParams {
    let mut p = DigestParams::IDENTITY;
    let mut word = [0u8; 4];
    for w in p.iv.iter_mut() {
        rng.fill_bytes(&mut word);
        *w = u32::from_be_bytes(word);
    }
    for m in p.round_masks.iter_mut() {
        rng.fill_bytes(&mut word);
        *m = u32::from_be_bytes(word);
    }
    rng.fill_bytes(&mut p.out_mask);
    p
}

// Uniform length in 8..=32: one byte, rejecting >= 250 (250 = 10 * 25).
fn draw_salt(rng: &mut dyn RngCore) -> Vec<u8> {
    let len = loop {
        let mut b = [0u8; 1];
        rng.fill_bytes(&mut b);
        if b[0] < 250 {
            break 8 + (b[0] % 25) as usize;
        }
    };
    let mut salt = vec![0u8; len];
    rng.fill_bytes(&mut salt);
    salt
}

/// Encode a program for the wire.
pub fn encode_program(p: &MeasurementProgram) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::with_capacity(400 + p.node_id.len());
    w.put_u8(PROGRAM_WIRE_VERSION);
    w.put_bytes(&p.program_id);
    w.put_u64(p.issued_at);
    w.put_u32(p.ttl_seconds);
    w.put_str16("node_id", &p.node_id)?;
    for iv in p.params.iv {
        w.put_u32(iv);
    }
    for mask in p.params.round_masks {
        w.put_u32(mask);
    }
    w.put_bytes(&p.params.out_mask);
    w.put_bytes(&p.seed);
    w.put_bytes8("salt_prefix", &p.salt_prefix)?;
    w.put_bytes8("salt_suffix", &p.salt_suffix)?;
    w.put_count16("targets", p.targets.len())?;
    for t in &p.targets {
        w.put_str16("target.id", &t.id)?;
        w.put_str16("target.version", &t.version)?;
    }
    w.put_count16("env_props", p.env_props.len())?;
    for prop in &p.env_props {
        w.put_str16("env_prop", prop)?;
    }
    Ok(w.into_bytes())
}

/// Decode a program from the wire. Strict: trailing bytes are an error.
pub fn decode_program(bytes: &[u8]) -> Result<MeasurementProgram, DecodeError> {
    let mut r = Reader::new(bytes);
    let version = r.u8("version").map_err(|_| DecodeError::TruncatedHeader)?;
    if version != PROGRAM_WIRE_VERSION {
        return Err(DecodeError::UnknownVersion(version));
    }
    let program_id = r.array16("program_id")?;
    let issued_at = r.u64("issued_at")?;
    let ttl_seconds = r.u32("ttl_seconds")?;
    let node_id = r.str16("node_id")?;

    let mut params = DigestParams::IDENTITY;
    for w in params.iv.iter_mut() {
        *w = r.u32("params.iv")?;
    }
    for m in params.round_masks.iter_mut() {
        *m = r.u32("params.round_masks")?;
    }
    params.out_mask = r.array16("params.out_mask")?;

    let seed = r.array16("seed")?;
    let salt_prefix = r.bytes8("salt_prefix")?.to_vec();
    let salt_suffix = r.bytes8("salt_suffix")?.to_vec();

    let target_count = r.u16("targets")? as usize;
    let mut targets = Vec::with_capacity(target_count.min(1024));
    for _ in 0..target_count {
        let id = r.str16("target.id")?;
        let version = r.str16("target.version")?;
        targets.push(ArtifactId { id, version });
    }

    let env_count = r.u16("env_props")? as usize;
    let mut env_props = Vec::with_capacity(env_count.min(1024));
    for _ in 0..env_count {
        env_props.push(r.str16("env_prop")?);
    }

    r.finish("program")?;
    Ok(MeasurementProgram {
        program_id,
        node_id,
        issued_at,
        ttl_seconds,
        params,
        seed,
        salt_prefix,
        salt_suffix,
        targets,
        env_props,
    })
}

/// Encode a report; this byte layout is also the encryption plaintext.
pub fn encode_report(rep: &MeasurementReport) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::with_capacity(64 + 40 * rep.artifact_digests.len());
    w.put_bytes(&rep.program_id);
    w.put_str16("node_id", &rep.node_id)?;
    w.put_count16("artifact_digests", rep.artifact_digests.len())?;
    for (id, digest) in &rep.artifact_digests {
        w.put_str16("target.id", &id.id)?;
        w.put_str16("target.version", &id.version)?;
        w.put_bytes(digest);
    }
    w.put_count16("env_values", rep.env_values.len())?;
    for (name, value) in &rep.env_values {
        w.put_str16("env_name", name)?;
        w.put_str16("env_value", value)?;
    }
    Ok(w.into_bytes())
}

pub fn decode_report(bytes: &[u8]) -> Result<MeasurementReport, DecodeError> {
    let mut r = Reader::new(bytes);
    let program_id = r.array16("program_id")?;
    let node_id = r.str16("node_id")?;

    let digest_count = r.u16("artifact_digests")? as usize;
    let mut artifact_digests = Vec::with_capacity(digest_count.min(1024));
    for _ in 0..digest_count {
        let id = r.str16("target.id")?;
        let version = r.str16("target.version")?;
        let digest = r.array16("artifact_digest")?;
        artifact_digests.push((ArtifactId { id, version }, digest));
    }

    let env_count = r.u16("env_values")? as usize;
    let mut env_values = Vec::with_capacity(env_count.min(1024));
    for _ in 0..env_count {
        let name = r.str16("env_name")?;
        let value = r.str16("env_value")?;
        env_values.push((name, value));
    }

    r.finish("report")?;
    Ok(MeasurementReport {
        program_id,
        node_id,
        artifact_digests,
        env_values,
    })
}

/// Supplies artifact bytes for measurement.
pub trait ArtifactResolver {
    /// Bytes for `id`, or a human-readable cause on failure.
    fn resolve(&self, id: &ArtifactId) -> Result<Cow<'_, [u8]>, String>;
}

/// Resolves environment properties; unknown names are reported as
/// [`ENV_UNAVAILABLE`].
pub trait EnvResolver {
    fn lookup(&self, name: &str) -> Option<String>;
}

/// In-memory artifact set, the node-side mirror of the server's golden store.
#[derive(Debug, Clone, Default)]
pub struct MemoryArtifacts {
    map: HashMap<ArtifactId, Vec<u8>>,
}

impl MemoryArtifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ArtifactId, bytes: Vec<u8>) {
        self.map.insert(id, bytes);
    }

    pub fn get_mut(&mut self, id: &ArtifactId) -> Option<&mut Vec<u8>> {
        self.map.get_mut(id)
    }
}

impl FromIterator<(ArtifactId, Vec<u8>)> for MemoryArtifacts {
    fn from_iter<I: IntoIterator<Item = (ArtifactId, Vec<u8>)>>(iter: I) -> Self {
        Self {
            map: iter.into_iter().collect(),
        }
    }
}

impl ArtifactResolver for MemoryArtifacts {
    fn resolve(&self, id: &ArtifactId) -> Result<Cow<'_, [u8]>, String> {
        self.map
            .get(id)
            .map(|b| Cow::Borrowed(b.as_slice()))
            .ok_or_else(|| "artifact not present".to_owned())
    }
}

/// Reads artifacts from disk, with the artifact id as a path relative to
/// `root`. Ids that escape the root (absolute, or containing `..`) are
/// refused: a malicious program must not be able to measure arbitrary files.
#[derive(Debug, Clone)]
pub struct DirArtifacts {
    root: PathBuf,
}

impl DirArtifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ArtifactResolver for DirArtifacts {
    fn resolve(&self, id: &ArtifactId) -> Result<Cow<'_, [u8]>, String> {
        let rel = Path::new(&id.id);
        let escapes = rel.is_absolute()
            || rel
                .components()
                .any(|c| !matches!(c, Component::Normal(_)));
        if escapes {
            return Err("artifact id escapes the artifact directory".to_owned());
        }
        std::fs::read(self.root.join(rel))
            .map(Cow::Owned)
            .map_err(|e| e.to_string())
    }
}

/// Environment properties of this process, for real node runs.
pub struct SystemEnv;

impl EnvResolver for SystemEnv {
    fn lookup(&self, name: &str) -> Option<String> {
        match name {
            "runtime.name" => Some("sp2p-node".to_owned()),
            "runtime.version" => Some(env!("CARGO_PKG_VERSION").to_owned()),
            "os.name" => Some(std::env::consts::OS.to_owned()),
            _ => None,
        }
    }
}

/// Fixed property map, for tests and simulations.
#[derive(Debug, Clone, Default)]
pub struct MapEnv(pub HashMap<String, String>);

impl EnvResolver for MapEnv {
    fn lookup(&self, name: &str) -> Option<String> {
        self.0.get(name).cloned()
    }
}

/// Resolves nothing; every property reports as unavailable.
pub struct NoEnv;

impl EnvResolver for NoEnv {
    fn lookup(&self, _name: &str) -> Option<String> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeasureError {
    #[error("cannot measure artifact {id}: {cause}")]
    Artifact { id: ArtifactId, cause: String },
}

/// Salted digest of one artifact under the program's parameters.
pub fn salted_digest(p: &MeasurementProgram, artifact_bytes: &[u8]) -> Digest {
    let mut h = Hasher::new(&p.params);
    h.update(&p.salt_prefix);
    h.update(artifact_bytes);
    h.update(&p.salt_suffix);
    h.finalize()
}

// Below this, per-target digesting goes wide; resolution stays sequential.
const PARALLEL_BYTES_THRESHOLD: usize = 256 * 1024;

/// Run a program: salted digest of every target in order, plus environment
/// property collection. Fails without producing a report if any target
/// cannot be resolved — a partial report must never be sent.
pub fn execute_program<A, E>(
    p: &MeasurementProgram,
    artifacts: &A,
    env: &E,
) -> Result<MeasurementReport, MeasureError>
where
    A: ArtifactResolver + ?Sized,
    E: EnvResolver + ?Sized,
{
    let mut resolved: Vec<(&ArtifactId, Cow<'_, [u8]>)> = Vec::with_capacity(p.targets.len());
    for id in &p.targets {
        let bytes = artifacts.resolve(id).map_err(|cause| MeasureError::Artifact {
            id: id.clone(),
            cause,
        })?;
        resolved.push((id, bytes));
    }

    let total_bytes: usize = resolved.iter().map(|(_, b)| b.len()).sum();
    let digest_one =
        |(id, bytes): &(&ArtifactId, Cow<'_, [u8]>)| ((*id).clone(), salted_digest(p, bytes));
    let artifact_digests = if total_bytes >= PARALLEL_BYTES_THRESHOLD {
        par::map(&resolved, digest_one)
    } else {
        resolved.iter().map(digest_one).collect()
    };

    let env_values = p
        .env_props
        .iter()
        .map(|name| {
            let value = env.lookup(name).unwrap_or_else(|| ENV_UNAVAILABLE.to_owned());
            (name.clone(), value)
        })
        .collect();

    Ok(MeasurementReport {
        program_id: p.program_id,
        node_id: p.node_id.clone(),
        artifact_digests,
        env_values,
    })
}
