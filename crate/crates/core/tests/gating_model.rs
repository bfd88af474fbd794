//! Model check of the resource gate: enumerate every action sequence up to a
//! fixed depth and assert, at each resource request, that the gate's answer
//! agrees with what the audit log alone predicts: grant if and only if the
//! node's latest recorded verdict is a PASS no older than the freshness
//! window.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use sp2p_core::clock::{Clock, FixedClock};
use sp2p_core::crypto::{encrypt_report, EncryptedReport};
use sp2p_core::par;
use sp2p_core::program::{execute_program, ArtifactId, MeasurementProgram, MemoryArtifacts, NoEnv};
use sp2p_core::protocol::server::{ServerContext, ServerSession, ServerTuning};
use sp2p_core::protocol::wire::WireMessage;
use sp2p_core::store::{CheckStatus, GoldenArtifact, GoldenStore, MemoryAuditSink, NodeRegistry};

const EPOCH: u64 = 1_700_000_000;
const NODE: &str = "n";
const FRESHNESS: u64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    /// Drop the connection and open a new session.
    Reconnect,
    /// Ask for a challenge on the current session.
    CheckIn,
    /// Answer the latest challenge honestly.
    SubmitHonest,
    /// Answer the latest challenge from a tampered artifact set.
    SubmitTampered,
    /// Resend the last report the server accepted.
    ReplayAccepted,
    /// Let the challenge TTL lapse.
    Advance61,
    /// Let a PASS go stale.
    Advance3601,
    /// Ask the gate for a resource.
    RequestResource,
}

const ALPHABET: [Action; 8] = [
    Action::Reconnect,
    Action::CheckIn,
    Action::SubmitHonest,
    Action::SubmitTampered,
    Action::ReplayAccepted,
    Action::Advance61,
    Action::Advance3601,
    Action::RequestResource,
];

fn tiny_store() -> Arc<GoldenStore> {
    Arc::new(
        GoldenStore::from_artifacts(vec![
            GoldenArtifact {
                artifact_id: ArtifactId::new("bin/app", "1"),
                bytes: b"a small protected binary".to_vec(),
            },
            GoldenArtifact {
                artifact_id: ArtifactId::new("conf", "1"),
                bytes: b"config".to_vec(),
            },
        ])
        .unwrap(),
    )
}

struct World {
    ctx: ServerContext,
    sink: MemoryAuditSink,
    clock: Arc<FixedClock>,
    session: ServerSession,
    last_program: Option<MeasurementProgram>,
    last_accepted: Option<EncryptedReport>,
    honest: MemoryArtifacts,
    tampered: MemoryArtifacts,
}

impl World {
    fn new(store: &Arc<GoldenStore>, seed: u64) -> Self {
        let sink = MemoryAuditSink::new();
        let clock = Arc::new(FixedClock::new(EPOCH));
        let ctx = ServerContext::new(
            Arc::clone(store),
            NodeRegistry::new(Box::new(sink.clone())),
            clock.clone(),
            ChaCha20Rng::seed_from_u64(seed),
            ServerTuning::default(),
        );
        let honest: MemoryArtifacts = store
            .artifacts()
            .iter()
            .map(|a| (a.artifact_id.clone(), a.bytes.clone()))
            .collect();
        let mut tampered = honest.clone();
        tampered.get_mut(&ArtifactId::new("bin/app", "1")).unwrap()[0] ^= 0x01;
        Self {
            ctx,
            sink,
            clock,
            session: ServerSession::new(),
            last_program: None,
            last_accepted: None,
            honest,
            tampered,
        }
    }

    /// Feed a message; on a session teardown, reconnect, mirroring what a
    /// real client would be forced to do.
    fn send(&mut self, msg: WireMessage) -> Option<WireMessage> {
        match self.session.handle(msg, &self.ctx) {
            Ok(resp) => Some(resp),
            Err(_) => {
                self.session = ServerSession::new();
                None
            }
        }
    }

    fn step(&mut self, action: Action, trace: &[Action]) {
        match action {
            Action::Reconnect => {
                self.session = ServerSession::new();
            }
            Action::CheckIn => {
                if let Some(WireMessage::Program(p)) = self.send(WireMessage::AutocheckRequest {
                    node_id: NODE.into(),
                    client_version: 1,
                }) {
                    self.last_program = Some(p);
                }
            }
            Action::SubmitHonest | Action::SubmitTampered => {
                let Some(program) = self.last_program.clone() else {
                    return;
                };
                let artifacts = if action == Action::SubmitHonest {
                    &self.honest
                } else {
                    &self.tampered
                };
                let report = execute_program(&program, artifacts, &NoEnv).unwrap();
                let enc = encrypt_report(&program, &report).unwrap();
                if let Some(WireMessage::Status { passed: true, .. }) =
                    self.send(WireMessage::Report(enc.clone()))
                {
                    self.last_accepted = Some(enc);
                }
            }
            Action::ReplayAccepted => {
                let Some(enc) = self.last_accepted.clone() else {
                    return;
                };
                self.send(WireMessage::Report(enc));
            }
            Action::Advance61 => self.clock.advance(61),
            Action::Advance3601 => self.clock.advance(3601),
            Action::RequestResource => {
                let resp = self.send(WireMessage::ResourceRequest {
                    node_id: NODE.into(),
                    resource_id: "bin/app".into(),
                });
                let granted = matches!(
                    resp,
                    Some(WireMessage::ResourceResponse { granted: true, .. })
                );

                // the oracle: nothing but the audit log and the clock
                let now = self.clock.now();
                let expected = self
                    .sink
                    .events()
                    .iter()
                    .rev()
                    .find(|e| e.node_id == NODE)
                    .map(|e| {
                        e.status == CheckStatus::Pass && now.saturating_sub(e.timestamp) <= FRESHNESS
                    })
                    .unwrap_or(false);
                assert_eq!(
                    granted, expected,
                    "gate disagreed with the audit log after {trace:?} (now {now})"
                );
            }
        }
    }
}

#[test]
fn gate_always_agrees_with_the_audit_log() {
    const DEPTH: u32 = 6;
    let store = tiny_store();
    let total = (ALPHABET.len() as u64).pow(DEPTH);
    let chunk: Vec<u64> = (0..total).collect();

    let checked: usize = par::map(&chunk, |&trace_index| {
        // decode the trace index as base-8 digits
        let mut actions = [Action::Reconnect; DEPTH as usize];
        let mut rest = trace_index;
        for slot in actions.iter_mut() {
            *slot = ALPHABET[(rest % ALPHABET.len() as u64) as usize];
            rest /= ALPHABET.len() as u64;
        }
        // skip traces without a resource request: nothing to assert
        if !actions.contains(&Action::RequestResource) {
            return 0;
        }
        let mut world = World::new(&store, trace_index);
        for (i, action) in actions.iter().enumerate() {
            world.step(*action, &actions[..=i]);
        }
        1
    })
    .into_iter()
    .sum();

    // every trace containing at least one resource request was exercised
    assert!(checked > 100_000, "only {checked} traces checked");
    println!("checked {checked} action traces of depth {DEPTH}");
}
