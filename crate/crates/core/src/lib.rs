//! Just-in-time integrity checking for peer-to-peer resource sharing.
//!
//! A server answers each check-in with a freshly generated measurement
//! program: a parameterized digest, random salts, and a key seed, all drawn
//! per request. The node runs the program over its protected artifacts and
//! returns an encrypted report; the server reproduces the digests from its
//! golden copies and gates resource access on the comparison. Because the
//! digest parameterization changes every time, a report cannot be computed
//! ahead of the challenge or replayed after it.

pub mod clock;
pub mod codec;
pub mod crypto;
pub mod digest;
pub mod harness;
pub mod par;
pub mod program;
pub mod protocol;
pub mod store;

pub use clock::{Clock, FixedClock, SystemClock};
pub use crypto::{decrypt_report, derive_key, encrypt_report, CryptoError, EncryptedReport};
pub use digest::{md5_reference, parameterized_digest, Digest, DigestParams, Hasher};
pub use harness::{
    run_campaign, run_campaign_serial, run_scenario, synthetic_store, CampaignReport, KindMetrics,
    ScenarioKind, ScenarioResult,
};
pub use program::{
    decode_program, decode_report, encode_program, encode_report, execute_program,
    generate_program, ArtifactId, ArtifactResolver, DirArtifacts, EnvResolver, GenerateError,
    MapEnv, MeasureError, MeasurementProgram, MeasurementReport, MemoryArtifacts, NoEnv,
    SystemEnv, DEFAULT_ENV_PROPS, ENV_UNAVAILABLE,
};
pub use protocol::{
    loopback_pair, request_resource, run_check, serve_connection, serve_listener, CheckOutcome,
    ClientState, ProtocolError, ReasonCode, ServerContext, ServerSession, ServerTuning,
    SessionPhase, StopCause, Transport, WireMessage, DEFAULT_CLIENT_TIMEOUT, DEFAULT_MAX_FRAME,
    DEFAULT_PORT,
};
pub use store::{
    read_audit_log, AuditEvent, AuditSink, CheckStatus, ConsumeError, FileAuditSink,
    GoldenArtifact, GoldenStore, IssuanceTable, IssueState, ManifestEntry, MemoryAuditSink,
    NodeRecord, NodeRegistry, NodeStatus, StoreError,
};
