//! Server side of the check protocol: per-connection session state machine,
//! challenge issuance, report verification, and the resource gate.

use std::io;
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::clock::Clock;
use crate::codec::EncodeError;
use crate::crypto::{decrypt_report, CryptoError, EncryptedReport};
use crate::program::{generate_program, GenerateError, DEFAULT_ENV_PROPS};
use crate::store::{
    AuditEvent, CheckStatus, ConsumeError, GoldenStore, IssuanceTable, NodeRegistry, NodeStatus,
};

use super::transport::Transport;
use super::wire::{
    read_message, write_message, ProtocolError, ReasonCode, WireMessage, DEFAULT_MAX_FRAME,
};

/// Knobs for one server instance.
#[derive(Debug, Clone)]
pub struct ServerTuning {
    /// How long an issued challenge stays answerable.
    pub program_ttl_seconds: u32,
    /// How long a PASS keeps opening the resource gate.
    pub pass_freshness_seconds: u64,
    pub max_frame_bytes: usize,
    /// Environment properties requested with every program.
    pub env_props: Vec<String>,
}

impl Default for ServerTuning {
    fn default() -> Self {
        Self {
            program_ttl_seconds: 60,
            pass_freshness_seconds: 3600,
            max_frame_bytes: DEFAULT_MAX_FRAME,
            env_props: DEFAULT_ENV_PROPS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Everything sessions share: golden copies, outstanding challenges, node
/// standing, time, and randomness.
pub struct ServerContext {
    pub store: Arc<GoldenStore>,
    pub issuance: IssuanceTable,
    pub registry: NodeRegistry,
    pub clock: Arc<dyn Clock>,
    rng: Mutex<ChaCha20Rng>,
    pub tuning: ServerTuning,
}

impl ServerContext {
    pub fn new(
        store: Arc<GoldenStore>,
        registry: NodeRegistry,
        clock: Arc<dyn Clock>,
        rng: ChaCha20Rng,
        tuning: ServerTuning,
    ) -> Self {
        Self {
            store,
            issuance: IssuanceTable::new(),
            registry,
            clock,
            rng: Mutex::new(rng),
            tuning,
        }
    }

    /// Context with OS randomness, for production serving.
    pub fn with_entropy(
        store: Arc<GoldenStore>,
        registry: NodeRegistry,
        clock: Arc<dyn Clock>,
        tuning: ServerTuning,
    ) -> Self {
        Self::new(store, registry, clock, ChaCha20Rng::from_entropy(), tuning)
    }
}

/// Where a session stands. One challenge per session: request, program,
/// report, verdict, then the connection only serves resource requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionPhase {
    AwaitRequest,
    Issued,
    Verified,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{msg} not valid in session phase {phase:?}")]
    OutOfOrder {
        phase: SessionPhase,
        msg: &'static str,
    },
    #[error("cannot issue a challenge: {0}")]
    Generate(#[from] GenerateError),
    #[error("audit append failed: {0}")]
    Audit(#[from] io::Error),
    #[error("cannot encode response: {0}")]
    Encode(#[from] EncodeError),
    #[error("server state inconsistent: {0}")]
    Internal(String),
}

/// One connection's protocol state.
pub struct ServerSession {
    phase: SessionPhase,
    /// Who this session claims to be, set by the check-in request.
    node_id: Option<String>,
}

impl ServerSession {
    pub fn new() -> Self {
        Self {
            phase: SessionPhase::AwaitRequest,
            node_id: None,
        }
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    /// Feed one inbound message; every accepted message produces exactly one
    /// response. An error tears the session down.
    pub fn handle(
        &mut self,
        msg: WireMessage,
        ctx: &ServerContext,
    ) -> Result<WireMessage, SessionError> {
        match (self.phase, msg) {
            (SessionPhase::AwaitRequest, WireMessage::AutocheckRequest { node_id, .. }) => {
                self.handle_checkin(node_id, ctx)
            }
            (SessionPhase::Issued, WireMessage::Report(enc)) => self.handle_report(enc, ctx),
            // resource requests are valid in any phase and change none
            (_, WireMessage::ResourceRequest {
                node_id,
                resource_id,
            }) => Ok(handle_resource_request(&node_id, &resource_id, ctx)),
            (phase, other) => Err(SessionError::OutOfOrder {
                phase,
                msg: other.kind(),
            }),
        }
    }

    fn handle_checkin(
        &mut self,
        node_id: String,
        ctx: &ServerContext,
    ) -> Result<WireMessage, SessionError> {
        if node_id.is_empty() {
            // refused without consuming the session: the sender may retry
            // with a usable identity
            return Ok(WireMessage::Status {
                program_id: [0; 16],
                passed: false,
                reason: ReasonCode::Malformed,
            });
        }
        let targets = ctx.store.target_ids();
        let now = ctx.clock.now();
        let program = {
            let mut rng = ctx.rng.lock().unwrap();
            generate_program(
                &node_id,
                &targets,
                &ctx.tuning.env_props,
                now,
                ctx.tuning.program_ttl_seconds,
                &mut *rng,
            )?
        };
        ctx.issuance.register(program.clone());
        self.node_id = Some(node_id);
        self.phase = SessionPhase::Issued;
        Ok(WireMessage::Program(program))
    }

    fn handle_report(
        &mut self,
        enc: EncryptedReport,
        ctx: &ServerContext,
    ) -> Result<WireMessage, SessionError> {
        let node_id = self
            .node_id
            .clone()
            .ok_or_else(|| SessionError::Internal("issued session without a node".into()))?;
        let now = ctx.clock.now();
        let verdict = verify_report(&node_id, &enc, now, ctx)?;

        ctx.registry.record_status(&AuditEvent {
            timestamp: now,
            node_id,
            program_id: hex::encode(enc.program_id),
            status: if verdict == ReasonCode::None {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            reason: verdict.as_str().to_owned(),
        })?;

        self.phase = SessionPhase::Verified;
        Ok(WireMessage::Status {
            program_id: enc.program_id,
            passed: verdict == ReasonCode::None,
            reason: verdict,
        })
    }
}

impl Default for ServerSession {
    fn default() -> Self {
        Self::new()
    }
}

/// Check a report against the challenge it answers. `ReasonCode::None` means
/// the node measured clean.
fn verify_report(
    node_id: &str,
    enc: &EncryptedReport,
    now: u64,
    ctx: &ServerContext,
) -> Result<ReasonCode, SessionError> {
    let program = match ctx.issuance.consume(&enc.program_id, node_id, now) {
        Ok(p) => p,
        Err(e) => {
            return Ok(match e {
                ConsumeError::UnknownChallenge => ReasonCode::UnknownChallenge,
                ConsumeError::Replay => ReasonCode::Replay,
                ConsumeError::Expired => ReasonCode::Expired,
                ConsumeError::NodeMismatch => ReasonCode::NodeMismatch,
            })
        }
    };

    let report = match decrypt_report(&program, enc) {
        Ok(r) => r,
        Err(CryptoError::AuthFailure) => return Ok(ReasonCode::AuthFail),
        Err(CryptoError::MalformedReport(_))
        | Err(CryptoError::Misbinding)
        | Err(CryptoError::ProgramMismatch) => return Ok(ReasonCode::MalformedReport),
        Err(CryptoError::Encode(e)) => return Err(SessionError::Encode(e)),
    };

    if report.node_id != program.node_id {
        return Ok(ReasonCode::NodeMismatch);
    }

    let expected = ctx.store.expected_digests(&program).ok_or_else(|| {
        SessionError::Internal("issued program references artifacts the store lost".into())
    })?;
    if report.artifact_digests == expected {
        Ok(ReasonCode::None)
    } else {
        Ok(ReasonCode::DigestMismatch)
    }
}

/// The resource gate: grant only to nodes whose latest check passed and is
/// still fresh. Every other case, including unknown nodes and unknown
/// resources, is the same indistinguishable denial.
fn handle_resource_request(node_id: &str, resource_id: &str, ctx: &ServerContext) -> WireMessage {
    let now = ctx.clock.now();
    let standing =
        ctx.registry
            .effective_status(node_id, now, ctx.tuning.pass_freshness_seconds);
    if standing == NodeStatus::Pass {
        if let Some(artifact) = ctx.store.find_by_name(resource_id) {
            return WireMessage::ResourceResponse {
                granted: true,
                payload: artifact.bytes.clone(),
            };
        }
    }
    WireMessage::ResourceResponse {
        granted: false,
        payload: Vec::new(),
    }
}

/// Drive one connection to completion. Malformed frames draw a final
/// `MALFORMED` status before the connection closes; protocol-order
/// violations and transport failures close it silently.
pub fn serve_connection<T: Transport>(
    transport: &mut T,
    ctx: &ServerContext,
) -> Result<(), ProtocolError> {
    let mut session = ServerSession::new();
    loop {
        match read_message(transport, ctx.tuning.max_frame_bytes) {
            Ok(None) => return Ok(()),
            Ok(Some(msg)) => match session.handle(msg, ctx) {
                Ok(resp) => write_message(transport, &resp)?,
                Err(SessionError::OutOfOrder { .. }) => return Ok(()),
                Err(e) => {
                    return Err(ProtocolError::Io(io::Error::other(e.to_string())));
                }
            },
            Err(ProtocolError::Decode(_)) | Err(ProtocolError::FrameTooLarge { .. }) => {
                let _ = write_message(
                    transport,
                    &WireMessage::Status {
                        program_id: [0; 16],
                        passed: false,
                        reason: ReasonCode::Malformed,
                    },
                );
                return Ok(());
            }
            Err(e) => return Err(e),
        }
    }
}

/// Accept loop: one thread per connection, forever.
pub fn serve_listener(listener: TcpListener, ctx: Arc<ServerContext>) -> io::Result<()> {
    for stream in listener.incoming() {
        let mut stream: TcpStream = stream?;
        let ctx = Arc::clone(&ctx);
        std::thread::spawn(move || {
            let _ = serve_connection(&mut stream, &ctx);
        });
    }
    Ok(())
}
