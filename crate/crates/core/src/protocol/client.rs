//! Node side of the check protocol: run one challenge to completion and,
//! once passing, request resources.

use std::time::Duration;

use crate::crypto::encrypt_report;
use crate::program::{execute_program, ArtifactResolver, EnvResolver};

use super::transport::Transport;
use super::wire::{
    read_message, write_message, ProtocolError, ReasonCode, WireMessage, CLIENT_VERSION,
    DEFAULT_MAX_FRAME,
};

/// How long the client waits on a server response by default.
pub const DEFAULT_CLIENT_TIMEOUT: Duration = Duration::from_secs(30);

/// Where a check run stands. Every run ends Running or Stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientState {
    Init,
    SentRequest,
    Executing,
    AwaitStatus,
    /// Check passed; the node keeps operating and may request resources.
    Running,
    /// Check failed or could not complete; the node stops participating.
    Stopped,
}

/// Why a run ended in `Stopped`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopCause {
    /// No server response within the timeout.
    Timeout,
    /// The connection failed or framing broke.
    Transport(String),
    /// The server spoke out of protocol order or referenced the wrong
    /// challenge.
    Protocol(String),
    /// The delivered program was not issued to this node.
    WrongBinding(String),
    /// A protected artifact could not be measured; no report was sent.
    Measurement(String),
    /// The server verified the report and said FAIL.
    ServerFail(ReasonCode),
}

impl StopCause {
    pub fn describe(&self) -> String {
        match self {
            Self::Timeout => "timed out waiting for the server".into(),
            Self::Transport(e) => format!("transport failed: {e}"),
            Self::Protocol(e) => format!("protocol violation: {e}"),
            Self::WrongBinding(e) => format!("program binding rejected: {e}"),
            Self::Measurement(e) => format!("measurement failed: {e}"),
            Self::ServerFail(reason) => format!("server rejected the check: {reason}"),
        }
    }
}

/// Result of one full check run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckOutcome {
    /// `Running` or `Stopped`.
    pub state: ClientState,
    /// Every state visited, in order, ending with `state`.
    pub trace: Vec<ClientState>,
    /// Challenge id, once a program was received.
    pub program_id: Option<[u8; 16]>,
    /// Populated when the run stopped.
    pub stop_cause: Option<StopCause>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.state == ClientState::Running
    }

    /// Server verdict reason, when the run got that far.
    pub fn reason(&self) -> Option<ReasonCode> {
        match (&self.state, &self.stop_cause) {
            (ClientState::Running, _) => Some(ReasonCode::None),
            (_, Some(StopCause::ServerFail(r))) => Some(*r),
            _ => None,
        }
    }
}

struct Run {
    trace: Vec<ClientState>,
    program_id: Option<[u8; 16]>,
}

impl Run {
    fn new() -> Self {
        Self {
            trace: vec![ClientState::Init],
            program_id: None,
        }
    }

    fn enter(&mut self, state: ClientState) {
        self.trace.push(state);
    }

    fn finish(mut self, state: ClientState, stop_cause: Option<StopCause>) -> CheckOutcome {
        self.trace.push(state);
        CheckOutcome {
            state,
            trace: self.trace,
            program_id: self.program_id,
            stop_cause,
        }
    }

    fn stop(self, cause: StopCause) -> CheckOutcome {
        self.finish(ClientState::Stopped, Some(cause))
    }
}

fn read_or_stop<T: Transport>(
    transport: &mut T,
    run: &Run,
) -> Result<WireMessage, Box<CheckOutcome>> {
    match read_message(transport, DEFAULT_MAX_FRAME) {
        Ok(Some(msg)) => Ok(msg),
        Ok(None) => Err(Box::new(clone_stop(
            run,
            StopCause::Transport("server closed the connection".into()),
        ))),
        Err(e) if e.is_timeout() => Err(Box::new(clone_stop(run, StopCause::Timeout))),
        Err(ProtocolError::Decode(e)) => {
            Err(Box::new(clone_stop(run, StopCause::Protocol(e.to_string()))))
        }
        Err(e) => Err(Box::new(clone_stop(run, StopCause::Transport(e.to_string())))),
    }
}

fn clone_stop(run: &Run, cause: StopCause) -> CheckOutcome {
    Run {
        trace: run.trace.clone(),
        program_id: run.program_id,
    }
    .stop(cause)
}

/// Run one complete check over `transport`: request a program, execute it
/// over `artifacts`, report, and collect the verdict.
pub fn run_check<T, A, E>(
    transport: &mut T,
    node_id: &str,
    artifacts: &A,
    env: &E,
    timeout: Duration,
) -> CheckOutcome
where
    T: Transport,
    A: ArtifactResolver + ?Sized,
    E: EnvResolver + ?Sized,
{
    let mut run = Run::new();
    if let Err(e) = transport.set_read_timeout(Some(timeout)) {
        return run.stop(StopCause::Transport(e.to_string()));
    }

    let request = WireMessage::AutocheckRequest {
        node_id: node_id.to_owned(),
        client_version: CLIENT_VERSION,
    };
    if let Err(e) = write_message(transport, &request) {
        return run.stop(StopCause::Transport(e.to_string()));
    }
    run.enter(ClientState::SentRequest);

    let program = match read_or_stop(transport, &run) {
        Ok(WireMessage::Program(p)) => p,
        Ok(WireMessage::Status { passed: false, reason, .. }) => {
            // the server refused to issue at all
            return run.stop(StopCause::ServerFail(reason));
        }
        Ok(other) => {
            return run.stop(StopCause::Protocol(format!(
                "expected a program, got {}",
                other.kind()
            )))
        }
        Err(outcome) => return *outcome,
    };

    if program.node_id != node_id {
        return run.stop(StopCause::WrongBinding(format!(
            "program names node {:?}",
            program.node_id
        )));
    }
    run.program_id = Some(program.program_id);
    run.enter(ClientState::Executing);

    let report = match execute_program(&program, artifacts, env) {
        Ok(r) => r,
        Err(e) => return run.stop(StopCause::Measurement(e.to_string())),
    };
    let enc = match encrypt_report(&program, &report) {
        Ok(e) => e,
        Err(e) => return run.stop(StopCause::Measurement(e.to_string())),
    };
    if let Err(e) = write_message(transport, &WireMessage::Report(enc)) {
        return run.stop(StopCause::Transport(e.to_string()));
    }
    run.enter(ClientState::AwaitStatus);

    match read_or_stop(transport, &run) {
        Ok(WireMessage::Status {
            program_id,
            passed,
            reason,
        }) => {
            if program_id != program.program_id {
                return run.stop(StopCause::Protocol(
                    "status references a different challenge".into(),
                ));
            }
            if passed {
                run.finish(ClientState::Running, None)
            } else {
                run.stop(StopCause::ServerFail(reason))
            }
        }
        Ok(other) => run.stop(StopCause::Protocol(format!(
            "expected a status, got {}",
            other.kind()
        ))),
        Err(outcome) => *outcome,
    }
}

/// Ask the server for a resource. `Ok(Some(bytes))` on a grant, `Ok(None)`
/// on a denial.
pub fn request_resource<T: Transport>(
    transport: &mut T,
    node_id: &str,
    resource_id: &str,
    timeout: Duration,
) -> Result<Option<Vec<u8>>, ProtocolError> {
    transport.set_read_timeout(Some(timeout))?;
    write_message(
        transport,
        &WireMessage::ResourceRequest {
            node_id: node_id.to_owned(),
            resource_id: resource_id.to_owned(),
        },
    )?;
    match read_message(transport, DEFAULT_MAX_FRAME)? {
        Some(WireMessage::ResourceResponse { granted: true, payload }) => Ok(Some(payload)),
        Some(WireMessage::ResourceResponse { granted: false, .. }) => Ok(None),
        Some(other) => Err(ProtocolError::Io(std::io::Error::other(format!(
            "expected a resource response, got {}",
            other.kind()
        )))),
        None => Err(ProtocolError::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            "server closed the connection",
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::program::{ArtifactId, MemoryArtifacts, NoEnv};
    use crate::protocol::server::{serve_connection, ServerContext, ServerTuning};
    use crate::protocol::transport::loopback_pair;
    use crate::store::{GoldenArtifact, GoldenStore, MemoryAuditSink, NodeRegistry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;

    fn spawn_server(seed: u64) -> (super::super::transport::LoopbackEnd, Arc<ServerContext>) {
        let store = Arc::new(
            GoldenStore::from_artifacts(vec![GoldenArtifact {
                artifact_id: ArtifactId::new("bin/app", "1"),
                bytes: b"app image".to_vec(),
            }])
            .unwrap(),
        );
        let ctx = Arc::new(ServerContext::new(
            store,
            NodeRegistry::new(Box::new(MemoryAuditSink::new())),
            Arc::new(FixedClock::new(1_700_000_000)),
            ChaCha20Rng::seed_from_u64(seed),
            ServerTuning::default(),
        ));
        let (client_end, mut server_end) = loopback_pair();
        let thread_ctx = Arc::clone(&ctx);
        std::thread::spawn(move || {
            let _ = serve_connection(&mut server_end, &thread_ctx);
        });
        (client_end, ctx)
    }

    fn node_artifacts() -> MemoryArtifacts {
        [(ArtifactId::new("bin/app", "1"), b"app image".to_vec())]
            .into_iter()
            .collect()
    }

    #[test]
    fn honest_run_ends_running_with_full_trace() {
        let (mut t, _ctx) = spawn_server(1);
        let outcome = run_check(&mut t, "node-1", &node_artifacts(), &NoEnv, DEFAULT_CLIENT_TIMEOUT);
        assert!(outcome.passed());
        assert_eq!(outcome.reason(), Some(ReasonCode::None));
        assert_eq!(
            outcome.trace,
            vec![
                ClientState::Init,
                ClientState::SentRequest,
                ClientState::Executing,
                ClientState::AwaitStatus,
                ClientState::Running,
            ]
        );
        assert!(outcome.program_id.is_some());

        // same connection, now fetch a resource
        let payload = request_resource(&mut t, "node-1", "bin/app", DEFAULT_CLIENT_TIMEOUT)
            .unwrap()
            .expect("grant");
        assert_eq!(payload, b"app image");
    }

    #[test]
    fn tampered_node_stops_with_server_fail() {
        let (mut t, _ctx) = spawn_server(2);
        let mut artifacts = node_artifacts();
        artifacts.get_mut(&ArtifactId::new("bin/app", "1")).unwrap()[0] ^= 1;
        let outcome = run_check(&mut t, "node-1", &artifacts, &NoEnv, DEFAULT_CLIENT_TIMEOUT);
        assert!(!outcome.passed());
        assert_eq!(outcome.state, ClientState::Stopped);
        assert_eq!(
            outcome.stop_cause,
            Some(StopCause::ServerFail(ReasonCode::DigestMismatch))
        );
        assert_eq!(outcome.reason(), Some(ReasonCode::DigestMismatch));

        // stopped node asking for resources is denied
        let granted = request_resource(&mut t, "node-1", "bin/app", DEFAULT_CLIENT_TIMEOUT).unwrap();
        assert!(granted.is_none());
    }

    #[test]
    fn missing_artifact_stops_before_reporting() {
        let (mut t, ctx) = spawn_server(3);
        let empty = MemoryArtifacts::new();
        let outcome = run_check(&mut t, "node-1", &empty, &NoEnv, DEFAULT_CLIENT_TIMEOUT);
        assert_eq!(outcome.state, ClientState::Stopped);
        let cause = outcome.stop_cause.unwrap();
        match &cause {
            StopCause::Measurement(e) => assert!(e.contains("bin/app@1"), "{e}"),
            other => panic!("unexpected cause {other:?}"),
        }
        // no report ever reached the server: nothing audited
        assert!(ctx.registry.get("node-1").is_none());
    }

    #[test]
    fn silent_server_times_out() {
        let (mut client_end, _server_end) = loopback_pair();
        let outcome = run_check(
            &mut client_end,
            "node-1",
            &node_artifacts(),
            &NoEnv,
            Duration::from_millis(20),
        );
        assert_eq!(outcome.state, ClientState::Stopped);
        assert_eq!(outcome.stop_cause, Some(StopCause::Timeout));
        assert_eq!(outcome.trace.last(), Some(&ClientState::Stopped));
        assert_eq!(outcome.reason(), None);
    }

    #[test]
    fn vanishing_server_reads_as_transport_stop() {
        let (mut client_end, server_end) = loopback_pair();
        drop(server_end);
        let outcome = run_check(
            &mut client_end,
            "node-1",
            &node_artifacts(),
            &NoEnv,
            Duration::from_millis(50),
        );
        assert_eq!(outcome.state, ClientState::Stopped);
        assert!(matches!(outcome.stop_cause, Some(StopCause::Transport(_))));
    }

    #[test]
    fn program_bound_to_another_node_is_refused() {
        use super::super::wire::{read_message, write_message};

        let (mut client_end, mut fake_server) = loopback_pair();
        let handle = std::thread::spawn(move || {
            // act as a server that misdelivers a program
            let _req = read_message(&mut fake_server, DEFAULT_MAX_FRAME).unwrap().unwrap();
            let mut rng = ChaCha20Rng::seed_from_u64(9);
            let program = crate::program::generate_program(
                "someone-else",
                &[ArtifactId::new("bin/app", "1")],
                &[],
                0,
                60,
                &mut rng,
            )
            .unwrap();
            write_message(&mut fake_server, &WireMessage::Program(program)).unwrap();
            fake_server
        });

        let outcome = run_check(
            &mut client_end,
            "node-1",
            &node_artifacts(),
            &NoEnv,
            DEFAULT_CLIENT_TIMEOUT,
        );
        assert_eq!(outcome.state, ClientState::Stopped);
        assert!(matches!(outcome.stop_cause, Some(StopCause::WrongBinding(_))));
        // no report was sent after the refusal
        let mut fake_server = handle.join().unwrap();
        fake_server
            .set_read_timeout(Some(Duration::from_millis(20)))
            .unwrap();
        assert!(read_message(&mut fake_server, DEFAULT_MAX_FRAME).is_err());
    }

    #[test]
    fn out_of_order_server_message_is_protocol_stop() {
        use super::super::wire::write_message;

        let (mut client_end, mut fake_server) = loopback_pair();
        std::thread::spawn(move || {
            let _req = read_message(&mut fake_server, DEFAULT_MAX_FRAME).unwrap().unwrap();
            write_message(
                &mut fake_server,
                &WireMessage::ResourceResponse {
                    granted: false,
                    payload: vec![],
                },
            )
            .unwrap();
            // hold the end open until the client is done
            std::thread::sleep(Duration::from_millis(200));
        });

        let outcome = run_check(
            &mut client_end,
            "node-1",
            &node_artifacts(),
            &NoEnv,
            DEFAULT_CLIENT_TIMEOUT,
        );
        assert_eq!(outcome.state, ClientState::Stopped);
        assert!(matches!(outcome.stop_cause, Some(StopCause::Protocol(_))));
    }
}
