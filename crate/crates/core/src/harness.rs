//! Deterministic adversary harness: drives honest and hostile nodes against
//! a real server over in-memory connections and measures what the resource
//! gate lets through.
//!
//! Every trial builds its own server (fixed clock, seeded randomness,
//! in-memory audit log), so campaigns are reproducible bit for bit from the
//! campaign seed and can fan trials out across threads.

use std::sync::Arc;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::clock::FixedClock;
use crate::crypto::encrypt_report;
use crate::digest::md5_reference;
use crate::par;
use crate::program::{execute_program, ArtifactId, MeasurementReport, MemoryArtifacts, NoEnv};
use crate::protocol::client::{request_resource, run_check};
use crate::protocol::server::{serve_connection, ServerContext, ServerTuning};
use crate::protocol::transport::{loopback_pair, LoopbackEnd};
use crate::protocol::wire::{read_message, write_message, ReasonCode, WireMessage, DEFAULT_MAX_FRAME};
use crate::store::{AuditEvent, GoldenArtifact, GoldenStore, MemoryAuditSink, NodeRegistry};

const SCENARIO_EPOCH: u64 = 1_700_000_000;
const SCENARIO_TIMEOUT: Duration = Duration::from_secs(10);
const ATTACKER_NODE: &str = "node-under-test";
const VICTIM_NODE: &str = "victim-node";

/// Scenario families the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    /// Clean node, honest check, then a resource fetch.
    Honest,
    /// One artifact differs from the golden copy by a single flipped bit.
    TamperedArtifact,
    /// Resends a previously accepted report against a fresh challenge.
    Replay,
    /// Requests a challenge, never answers it, asks for resources anyway.
    Bypass,
    /// Answers with digests precomputed using the standard algorithm,
    /// ignoring the per-request parameterization and salts.
    Precompute,
    /// Passes its own check, then requests resources under another node's
    /// identity.
    ForgedIdentity,
    /// Skips the check protocol entirely and goes straight for resources.
    StripCheck,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Honest,
        ScenarioKind::TamperedArtifact,
        ScenarioKind::Replay,
        ScenarioKind::Bypass,
        ScenarioKind::Precompute,
        ScenarioKind::ForgedIdentity,
        ScenarioKind::StripCheck,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Honest => "HONEST",
            Self::TamperedArtifact => "TAMPERED_ARTIFACT",
            Self::Replay => "REPLAY",
            Self::Bypass => "BYPASS",
            Self::Precompute => "PRECOMPUTE",
            Self::ForgedIdentity => "FORGED_IDENTITY",
            Self::StripCheck => "STRIP_CHECK",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "honest" => Self::Honest,
            "tampered" | "tampered-artifact" => Self::TamperedArtifact,
            "replay" => Self::Replay,
            "bypass" => Self::Bypass,
            "precompute" => Self::Precompute,
            "forged-identity" | "forged" => Self::ForgedIdentity,
            "strip-check" | "strip" => Self::StripCheck,
            _ => return None,
        })
    }

    /// Parse a scenario selector; `all` expands to every kind.
    pub fn parse_selector(s: &str) -> Option<Vec<Self>> {
        if s.eq_ignore_ascii_case("all") {
            return Some(Self::ALL.to_vec());
        }
        Self::parse(s).map(|k| vec![k])
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One concrete attacker: a kind plus whatever randomness it needs.
#[derive(Debug, Clone)]
enum Attacker {
    Honest,
    TamperedArtifact {
        artifact_index: usize,
        bit_position: usize,
    },
    Replay,
    Bypass,
    Precompute,
    ForgedIdentity,
    StripCheck,
}

impl Attacker {
    fn instantiate(kind: ScenarioKind, rng: &mut ChaCha20Rng) -> Self {
        match kind {
            ScenarioKind::Honest => Self::Honest,
            ScenarioKind::TamperedArtifact => Self::TamperedArtifact {
                artifact_index: rng.next_u32() as usize,
                bit_position: rng.next_u64() as usize,
            },
            ScenarioKind::Replay => Self::Replay,
            ScenarioKind::Bypass => Self::Bypass,
            ScenarioKind::Precompute => Self::Precompute,
            ScenarioKind::ForgedIdentity => Self::ForgedIdentity,
            ScenarioKind::StripCheck => Self::StripCheck,
        }
    }

    fn kind(&self) -> ScenarioKind {
        match self {
            Self::Honest => ScenarioKind::Honest,
            Self::TamperedArtifact { .. } => ScenarioKind::TamperedArtifact,
            Self::Replay => ScenarioKind::Replay,
            Self::Bypass => ScenarioKind::Bypass,
            Self::Precompute => ScenarioKind::Precompute,
            Self::ForgedIdentity => ScenarioKind::ForgedIdentity,
            Self::StripCheck => ScenarioKind::StripCheck,
        }
    }
}

/// What one trial produced.
#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub kind: ScenarioKind,
    /// Final server verdict, when the trial got one.
    pub check_status: Option<(bool, ReasonCode)>,
    /// Did the closing resource request succeed?
    pub resource_granted: bool,
    /// Server audit log at the end of the trial.
    pub audit: Vec<AuditEvent>,
}

impl ScenarioResult {
    /// An adversarial trial counts as detected when the gate denied it.
    pub fn detected(&self) -> bool {
        self.kind != ScenarioKind::Honest && !self.resource_granted
    }

    /// An honest trial succeeds when the check passed and the gate opened.
    pub fn honest_success(&self) -> bool {
        self.kind == ScenarioKind::Honest
            && self.check_status == Some((true, ReasonCode::None))
            && self.resource_granted
    }
}

/// Deterministic artifact set for simulations: a few pseudo-random binaries
/// of assorted sizes.
pub fn synthetic_store(seed: u64) -> Arc<GoldenStore> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let specs = [
        ("bin/app", "1", 4096usize),
        ("lib/core.so", "2", 16 * 1024),
        ("conf/policy.json", "1", 512),
    ];
    let artifacts = specs
        .iter()
        .map(|(id, version, size)| {
            let mut bytes = vec![0u8; *size];
            rng.fill_bytes(&mut bytes);
            GoldenArtifact {
                artifact_id: ArtifactId::new(*id, *version),
                bytes,
            }
        })
        .collect();
    Arc::new(GoldenStore::from_artifacts(artifacts).unwrap())
}

struct Scenario {
    ctx: Arc<ServerContext>,
    sink: MemoryAuditSink,
}

impl Scenario {
    fn new(store: &Arc<GoldenStore>, seed: u64) -> Self {
        let sink = MemoryAuditSink::new();
        let ctx = Arc::new(ServerContext::new(
            Arc::clone(store),
            NodeRegistry::new(Box::new(sink.clone())),
            Arc::new(FixedClock::new(SCENARIO_EPOCH)),
            ChaCha20Rng::seed_from_u64(seed),
            ServerTuning::default(),
        ));
        Self { ctx, sink }
    }

    /// Open a fresh connection to this trial's server.
    fn connect(&self) -> LoopbackEnd {
        use crate::protocol::transport::Transport;
        let (mut client, mut server) = loopback_pair();
        let ctx = Arc::clone(&self.ctx);
        std::thread::spawn(move || {
            let _ = serve_connection(&mut server, &ctx);
        });
        client.set_read_timeout(Some(SCENARIO_TIMEOUT)).unwrap();
        client
    }

    fn result(
        &self,
        kind: ScenarioKind,
        check_status: Option<(bool, ReasonCode)>,
        resource_granted: bool,
    ) -> ScenarioResult {
        ScenarioResult {
            kind,
            check_status,
            resource_granted,
            audit: self.sink.events(),
        }
    }
}

fn honest_artifacts(store: &GoldenStore) -> MemoryArtifacts {
    store
        .artifacts()
        .iter()
        .map(|a| (a.artifact_id.clone(), a.bytes.clone()))
        .collect()
}

fn fetch(conn: &mut LoopbackEnd, node_id: &str) -> bool {
    request_resource(conn, node_id, "bin/app", SCENARIO_TIMEOUT)
        .map(|grant| grant.is_some())
        .unwrap_or(false)
}

/// Drive a program request over an open connection by hand; used by
/// attackers that deviate after the challenge arrives.
fn request_program(conn: &mut LoopbackEnd, node_id: &str) -> crate::program::MeasurementProgram {
    write_message(
        conn,
        &WireMessage::AutocheckRequest {
            node_id: node_id.to_owned(),
            client_version: crate::protocol::wire::CLIENT_VERSION,
        },
    )
    .expect("send check-in");
    match read_message(conn, DEFAULT_MAX_FRAME).expect("read").expect("open") {
        WireMessage::Program(p) => p,
        other => panic!("expected program, got {}", other.kind()),
    }
}

fn submit_report(
    conn: &mut LoopbackEnd,
    enc: &crate::crypto::EncryptedReport,
) -> (bool, ReasonCode) {
    write_message(conn, &WireMessage::Report(enc.clone())).expect("send report");
    match read_message(conn, DEFAULT_MAX_FRAME).expect("read").expect("open") {
        WireMessage::Status { passed, reason, .. } => (passed, reason),
        other => panic!("expected status, got {}", other.kind()),
    }
}

/// Run one trial: the given attacker against a fresh server seeded from
/// `seed` over `store`.
fn run_attacker(attacker: &Attacker, store: &Arc<GoldenStore>, seed: u64) -> ScenarioResult {
    let scenario = Scenario::new(store, seed);
    let kind = attacker.kind();

    match attacker {
        Attacker::Honest => {
            let mut conn = scenario.connect();
            let artifacts = honest_artifacts(store);
            let outcome = run_check(&mut conn, ATTACKER_NODE, &artifacts, &NoEnv, SCENARIO_TIMEOUT);
            let granted = fetch(&mut conn, ATTACKER_NODE);
            scenario.result(kind, outcome.reason().map(|r| (outcome.passed(), r)), granted)
        }

        Attacker::TamperedArtifact {
            artifact_index,
            bit_position,
        } => {
            let mut artifacts = honest_artifacts(store);
            let victim_artifact =
                store.artifacts()[artifact_index % store.len()].artifact_id.clone();
            let bytes = artifacts.get_mut(&victim_artifact).unwrap();
            let bit = bit_position % (bytes.len() * 8);
            bytes[bit / 8] ^= 1 << (bit % 8);

            let mut conn = scenario.connect();
            let outcome = run_check(&mut conn, ATTACKER_NODE, &artifacts, &NoEnv, SCENARIO_TIMEOUT);
            let granted = fetch(&mut conn, ATTACKER_NODE);
            scenario.result(kind, outcome.reason().map(|r| (outcome.passed(), r)), granted)
        }

        Attacker::Replay => {
            // first, an entirely honest pass whose report we keep
            let mut first = scenario.connect();
            let program = request_program(&mut first, ATTACKER_NODE);
            let report = execute_program(&program, &honest_artifacts(store), &NoEnv).unwrap();
            let captured = encrypt_report(&program, &report).unwrap();
            let (passed, _) = submit_report(&mut first, &captured);
            assert!(passed, "setup pass failed");
            drop(first);

            // then a new session: take the fresh challenge, answer with the
            // stale report
            let mut second = scenario.connect();
            let _fresh_program = request_program(&mut second, ATTACKER_NODE);
            let verdict = submit_report(&mut second, &captured);
            let granted = fetch(&mut second, ATTACKER_NODE);
            scenario.result(kind, Some(verdict), granted)
        }

        Attacker::Bypass => {
            let mut conn = scenario.connect();
            let _program = request_program(&mut conn, ATTACKER_NODE);
            // never execute, never report; straight to the gate
            let granted = fetch(&mut conn, ATTACKER_NODE);
            scenario.result(kind, None, granted)
        }

        Attacker::Precompute => {
            let mut conn = scenario.connect();
            let program = request_program(&mut conn, ATTACKER_NODE);
            // digests computed ahead of time with the standard algorithm;
            // the per-request parameterization and salts are ignored
            let report = MeasurementReport {
                program_id: program.program_id,
                node_id: program.node_id.clone(),
                artifact_digests: program
                    .targets
                    .iter()
                    .map(|id| (id.clone(), md5_reference(&store.get(id).unwrap().bytes)))
                    .collect(),
                env_values: Vec::new(),
            };
            let enc = encrypt_report(&program, &report).unwrap();
            let verdict = submit_report(&mut conn, &enc);
            let granted = fetch(&mut conn, ATTACKER_NODE);
            scenario.result(kind, Some(verdict), granted)
        }

        Attacker::ForgedIdentity => {
            // pass honestly under one identity, then claim another at the
            // gate
            let mut conn = scenario.connect();
            let artifacts = honest_artifacts(store);
            let outcome = run_check(&mut conn, ATTACKER_NODE, &artifacts, &NoEnv, SCENARIO_TIMEOUT);
            assert!(outcome.passed(), "setup pass failed");
            let granted = fetch(&mut conn, VICTIM_NODE);
            scenario.result(kind, None, granted)
        }

        Attacker::StripCheck => {
            let mut conn = scenario.connect();
            let granted = fetch(&mut conn, ATTACKER_NODE);
            scenario.result(kind, None, granted)
        }
    }
}

/// Run one trial of `kind` with its attack parameters drawn from `seed`.
pub fn run_scenario(kind: ScenarioKind, store: &Arc<GoldenStore>, seed: u64) -> ScenarioResult {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let attacker = Attacker::instantiate(kind, &mut rng);
    let trial_seed = rng.next_u64();
    run_attacker(&attacker, store, trial_seed)
}

/// Aggregates for one scenario kind across a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct KindMetrics {
    pub kind: ScenarioKind,
    pub trials: u32,
    /// Adversarial trials the gate denied.
    pub detections: u32,
    /// Honest trials that passed and were granted.
    pub successes: u32,
}

impl KindMetrics {
    /// Fraction of adversarial trials denied; undefined for the honest kind
    /// and for zero trials.
    pub fn detection_rate(&self) -> Option<f64> {
        if self.kind == ScenarioKind::Honest || self.trials == 0 {
            return None;
        }
        Some(self.detections as f64 / self.trials as f64)
    }

    /// Fraction of honest trials that completed; undefined for adversarial
    /// kinds and for zero trials.
    pub fn success_rate(&self) -> Option<f64> {
        if self.kind != ScenarioKind::Honest || self.trials == 0 {
            return None;
        }
        Some(self.successes as f64 / self.trials as f64)
    }

    fn rate_cell(rate: Option<f64>) -> String {
        match rate {
            Some(r) => format!("{r:.4}"),
            None => "not-applicable".to_owned(),
        }
    }
}

/// A whole campaign's worth of metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub seed: u64,
    pub metrics: Vec<KindMetrics>,
}

impl CampaignReport {
    pub fn total_trials(&self) -> u32 {
        self.metrics.iter().map(|m| m.trials).sum()
    }

    /// True when every adversarial kind that ran was always denied and every
    /// honest trial succeeded.
    pub fn all_green(&self) -> bool {
        self.metrics.iter().all(|m| {
            if m.trials == 0 {
                return true;
            }
            match m.kind {
                ScenarioKind::Honest => m.successes == m.trials,
                _ => m.detections == m.trials,
            }
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let scenarios: Vec<serde_json::Value> = self
            .metrics
            .iter()
            .map(|m| {
                let rate = |r: Option<f64>| match r {
                    Some(v) => serde_json::json!(v),
                    None => serde_json::json!("not-applicable"),
                };
                serde_json::json!({
                    "scenario": m.kind.label(),
                    "trials": m.trials,
                    "detections": m.detections,
                    "successes": m.successes,
                    "detection_rate": rate(m.detection_rate()),
                    "success_rate": rate(m.success_rate()),
                })
            })
            .collect();
        serde_json::json!({
            "seed": self.seed,
            "total_trials": self.total_trials(),
            "all_green": self.all_green(),
            "scenarios": scenarios,
        })
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:>7} {:>11} {:>15} {:>15}\n",
            "scenario", "trials", "detections", "detection_rate", "success_rate"
        ));
        for m in &self.metrics {
            out.push_str(&format!(
                "{:<18} {:>7} {:>11} {:>15} {:>15}\n",
                m.kind.label(),
                m.trials,
                m.detections,
                KindMetrics::rate_cell(m.detection_rate()),
                KindMetrics::rate_cell(m.success_rate()),
            ));
        }
        out.push_str(&format!(
            "total trials: {}   all green: {}\n",
            self.total_trials(),
            self.all_green()
        ));
        out
    }
}

fn campaign_jobs(counts: &[(ScenarioKind, u32)], seed: u64) -> Vec<(Attacker, u64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    for (kind, n) in counts {
        for _ in 0..*n {
            let attacker = Attacker::instantiate(*kind, &mut rng);
            let trial_seed = rng.next_u64();
            jobs.push((attacker, trial_seed));
        }
    }
    jobs
}

fn fold_metrics(
    counts: &[(ScenarioKind, u32)],
    seed: u64,
    results: &[ScenarioResult],
) -> CampaignReport {
    let mut metrics: Vec<KindMetrics> = counts
        .iter()
        .map(|(kind, _)| KindMetrics {
            kind: *kind,
            trials: 0,
            detections: 0,
            successes: 0,
        })
        .collect();
    for r in results {
        let m = metrics.iter_mut().find(|m| m.kind == r.kind).unwrap();
        m.trials += 1;
        if r.detected() {
            m.detections += 1;
        }
        if r.honest_success() {
            m.successes += 1;
        }
    }
    CampaignReport { seed, metrics }
}

/// Run `counts.1` trials of each scenario kind, fanned out across threads
/// when the parallel feature is on.
pub fn run_campaign(
    store: &Arc<GoldenStore>,
    counts: &[(ScenarioKind, u32)],
    seed: u64,
) -> CampaignReport {
    let jobs = campaign_jobs(counts, seed);
    let results = par::map(&jobs, |(attacker, trial_seed)| {
        run_attacker(attacker, store, *trial_seed)
    });
    fold_metrics(counts, seed, &results)
}

/// Same campaign, forced onto one thread; the benchmark baseline.
pub fn run_campaign_serial(
    store: &Arc<GoldenStore>,
    counts: &[(ScenarioKind, u32)],
    seed: u64,
) -> CampaignReport {
    let jobs = campaign_jobs(counts, seed);
    let results = par::map_sequential(&jobs, |(attacker, trial_seed)| {
        run_attacker(attacker, store, *trial_seed)
    });
    fold_metrics(counts, seed, &results)
}
