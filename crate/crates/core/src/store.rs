//! Server-side state: golden artifact copies, the audit log, per-node status,
//! and the single-use challenge table.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write as _};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::program::{salted_digest, ArtifactId, ArtifactResolver, MeasurementProgram};

/// One line of the artifact manifest: what to protect and where its golden
/// copy lives, relative to the artifact root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub version: String,
    pub path: String,
}

/// A protected artifact's golden copy.
#[derive(Debug, Clone)]
pub struct GoldenArtifact {
    pub artifact_id: ArtifactId,
    pub bytes: Vec<u8>,
}

impl GoldenArtifact {
    pub fn size(&self) -> usize {
        self.bytes.len()
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("manifest {path}: {source}")]
    ManifestRead {
        path: String,
        source: io::Error,
    },
    #[error("manifest {path}: {source}")]
    ManifestParse {
        path: String,
        source: serde_json::Error,
    },
    #[error("golden copy for {id}: {source}")]
    ArtifactRead {
        id: ArtifactId,
        source: io::Error,
    },
    #[error("duplicate artifact {0}")]
    Duplicate(ArtifactId),
    #[error("store holds no artifacts")]
    Empty,
}

/// Golden copies of every protected artifact, in manifest order.
#[derive(Debug)]
pub struct GoldenStore {
    artifacts: Vec<GoldenArtifact>,
    index: HashMap<ArtifactId, usize>,
}

impl GoldenStore {
    pub fn from_artifacts(artifacts: Vec<GoldenArtifact>) -> Result<Self, StoreError> {
        if artifacts.is_empty() {
            return Err(StoreError::Empty);
        }
        let mut index = HashMap::with_capacity(artifacts.len());
        for (i, a) in artifacts.iter().enumerate() {
            if index.insert(a.artifact_id.clone(), i).is_some() {
                return Err(StoreError::Duplicate(a.artifact_id.clone()));
            }
        }
        Ok(Self { artifacts, index })
    }

    /// Read a manifest file and load every golden copy under `root`.
    pub fn load(root: &Path, manifest_path: &Path) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(manifest_path).map_err(|source| {
            StoreError::ManifestRead {
                path: manifest_path.display().to_string(),
                source,
            }
        })?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|source| StoreError::ManifestParse {
                path: manifest_path.display().to_string(),
                source,
            })?;
        let mut artifacts = Vec::with_capacity(entries.len());
        for e in entries {
            let artifact_id = ArtifactId::new(e.id, e.version);
            let bytes = std::fs::read(root.join(&e.path)).map_err(|source| {
                StoreError::ArtifactRead {
                    id: artifact_id.clone(),
                    source,
                }
            })?;
            artifacts.push(GoldenArtifact { artifact_id, bytes });
        }
        Self::from_artifacts(artifacts)
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }

    pub fn artifacts(&self) -> &[GoldenArtifact] {
        &self.artifacts
    }

    /// Target list for challenge generation, in manifest order.
    pub fn target_ids(&self) -> Vec<ArtifactId> {
        self.artifacts.iter().map(|a| a.artifact_id.clone()).collect()
    }

    pub fn get(&self, id: &ArtifactId) -> Option<&GoldenArtifact> {
        self.index.get(id).map(|&i| &self.artifacts[i])
    }

    /// Lookup by bare name, for resource requests that do not carry a
    /// version.
    pub fn find_by_name(&self, name: &str) -> Option<&GoldenArtifact> {
        self.artifacts.iter().find(|a| a.artifact_id.id == name)
    }

    /// The digests an honest node must produce for `program`.
    pub fn expected_digests(&self, program: &MeasurementProgram) -> Option<Vec<(ArtifactId, Digest)>> {
        program
            .targets
            .iter()
            .map(|id| self.get(id).map(|a| (id.clone(), salted_digest(program, &a.bytes))))
            .collect()
    }
}

impl ArtifactResolver for GoldenStore {
    fn resolve(&self, id: &ArtifactId) -> Result<std::borrow::Cow<'_, [u8]>, String> {
        self.get(id)
            .map(|a| std::borrow::Cow::Borrowed(a.bytes.as_slice()))
            .ok_or_else(|| "no golden copy".to_owned())
    }
}

/// Verification verdict for one completed check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CheckStatus {
    Pass,
    Fail,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
        })
    }
}

/// A node's standing as the resource gate sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    /// Never checked, or last pass has gone stale.
    Unknown,
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub timestamp: u64,
    pub program_id: String,
    pub status: CheckStatus,
    pub reason: String,
}

/// Everything the server remembers about one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub node_id: String,
    pub status: CheckStatus,
    pub last_program_id: String,
    pub last_check_at: u64,
    pub history: Vec<HistoryEntry>,
}

/// One audit line, serialized as JSON and appended to the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub timestamp: u64,
    pub node_id: String,
    pub program_id: String,
    pub status: CheckStatus,
    pub reason: String,
}

/// Where audit events go. Appends must be durable before the in-memory
/// registry mutates, so a rebuilt registry can never know more than the log.
pub trait AuditSink: Send {
    fn append(&mut self, event: &AuditEvent) -> io::Result<()>;
}

/// JSON-lines audit log on disk, one event per line, append-only.
pub struct FileAuditSink {
    file: File,
}

impl FileAuditSink {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }
}

impl AuditSink for FileAuditSink {
    fn append(&mut self, event: &AuditEvent) -> io::Result<()> {
        let line = serde_json::to_string(event)?;
        self.file.write_all(line.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.flush()
    }
}

/// Collects events in memory; the handle stays readable after the sink moves
/// into a registry.
#[derive(Clone, Default)]
pub struct MemoryAuditSink {
    events: Arc<Mutex<Vec<AuditEvent>>>,
}

impl MemoryAuditSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<AuditEvent> {
        self.events.lock().unwrap().clone()
    }
}

impl AuditSink for MemoryAuditSink {
    fn append(&mut self, event: &AuditEvent) -> io::Result<()> {
        self.events.lock().unwrap().push(event.clone());
        Ok(())
    }
}

/// Read a JSON-lines audit log back into events. Blank lines are skipped;
/// anything else that fails to parse is an error.
pub fn read_audit_log(path: &Path) -> io::Result<Vec<AuditEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: AuditEvent = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("audit log line {}: {e}", n + 1),
            )
        })?;
        events.push(event);
    }
    Ok(events)
}

struct RegistryInner {
    nodes: HashMap<String, NodeRecord>,
    sink: Box<dyn AuditSink>,
}

/// Per-node verification outcomes, fed by the audit sink and rebuildable
/// from it.
pub struct NodeRegistry {
    inner: Mutex<RegistryInner>,
}

impl NodeRegistry {
    pub fn new(sink: Box<dyn AuditSink>) -> Self {
        Self {
            inner: Mutex::new(RegistryInner {
                nodes: HashMap::new(),
                sink,
            }),
        }
    }

    /// Rebuild a registry by replaying a previously written log into `sink`'s
    /// registry without re-appending.
    pub fn rebuild(events: &[AuditEvent], sink: Box<dyn AuditSink>) -> Self {
        let registry = Self::new(sink);
        {
            let mut inner = registry.inner.lock().unwrap();
            for e in events {
                Self::apply(&mut inner.nodes, e);
            }
        }
        registry
    }

    /// Rebuild from a log file, appending future events to the same file.
    pub fn load_from_log(path: &Path) -> io::Result<Self> {
        let events = if path.exists() {
            read_audit_log(path)?
        } else {
            Vec::new()
        };
        let sink = FileAuditSink::open(path)?;
        Ok(Self::rebuild(&events, Box::new(sink)))
    }

    fn apply(nodes: &mut HashMap<String, NodeRecord>, e: &AuditEvent) {
        let entry = HistoryEntry {
            timestamp: e.timestamp,
            program_id: e.program_id.clone(),
            status: e.status,
            reason: e.reason.clone(),
        };
        match nodes.get_mut(&e.node_id) {
            Some(rec) => {
                rec.status = e.status;
                rec.last_program_id = e.program_id.clone();
                rec.last_check_at = e.timestamp;
                rec.history.push(entry);
            }
            None => {
                nodes.insert(
                    e.node_id.clone(),
                    NodeRecord {
                        node_id: e.node_id.clone(),
                        status: e.status,
                        last_program_id: e.program_id.clone(),
                        last_check_at: e.timestamp,
                        history: vec![entry],
                    },
                );
            }
        }
    }

    /// Record one verification outcome. The audit append happens first; if it
    /// fails the registry is left untouched and the error surfaces.
    pub fn record_status(&self, event: &AuditEvent) -> io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        inner.sink.append(event)?;
        Self::apply(&mut inner.nodes, event);
        Ok(())
    }

    pub fn get(&self, node_id: &str) -> Option<NodeRecord> {
        self.inner.lock().unwrap().nodes.get(node_id).cloned()
    }

    /// Raw last-known status; nodes never seen are Unknown.
    pub fn get_status(&self, node_id: &str) -> NodeStatus {
        match self.inner.lock().unwrap().nodes.get(node_id) {
            None => NodeStatus::Unknown,
            Some(rec) => match rec.status {
                CheckStatus::Pass => NodeStatus::Pass,
                CheckStatus::Fail => NodeStatus::Fail,
            },
        }
    }

    /// Status as the gate must read it: a pass older than the freshness
    /// window decays to Unknown. Failures do not decay.
    pub fn effective_status(&self, node_id: &str, now: u64, freshness_seconds: u64) -> NodeStatus {
        match self.inner.lock().unwrap().nodes.get(node_id) {
            None => NodeStatus::Unknown,
            Some(rec) => match rec.status {
                CheckStatus::Fail => NodeStatus::Fail,
                CheckStatus::Pass => {
                    if now.saturating_sub(rec.last_check_at) <= freshness_seconds {
                        NodeStatus::Pass
                    } else {
                        NodeStatus::Unknown
                    }
                }
            },
        }
    }

    /// Full state snapshot, sorted by node id, for equivalence checks.
    pub fn snapshot(&self) -> Vec<NodeRecord> {
        let inner = self.inner.lock().unwrap();
        let mut records: Vec<NodeRecord> = inner.nodes.values().cloned().collect();
        records.sort_by(|a, b| a.node_id.cmp(&b.node_id));
        records
    }
}

/// Lifecycle of one issued challenge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueState {
    Issued,
    Consumed,
    Expired,
}

struct IssuedProgram {
    program: MeasurementProgram,
    state: IssueState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConsumeError {
    #[error("no such challenge outstanding")]
    UnknownChallenge,
    #[error("challenge already consumed")]
    Replay,
    #[error("challenge expired")]
    Expired,
    #[error("challenge was issued to a different node")]
    NodeMismatch,
}

/// Outstanding challenges. Each program id verifies at most once; a second
/// attempt is a replay no matter what else is wrong with it.
#[derive(Default)]
pub struct IssuanceTable {
    programs: Mutex<HashMap<[u8; 16], IssuedProgram>>,
}

impl IssuanceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Challenges ever registered, regardless of state.
    pub fn len(&self) -> usize {
        self.programs.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn register(&self, program: MeasurementProgram) {
        self.programs.lock().unwrap().insert(
            program.program_id,
            IssuedProgram {
                program,
                state: IssueState::Issued,
            },
        );
    }

    pub fn state(&self, program_id: &[u8; 16]) -> Option<IssueState> {
        self.programs.lock().unwrap().get(program_id).map(|p| p.state)
    }

    /// Atomically consume a challenge for verification. Order of checks:
    /// existence, single-use state, expiry, node binding. Expiry observed
    /// here marks the entry Expired; a node mismatch leaves it Issued for
    /// the rightful owner.
    pub fn consume(
        &self,
        program_id: &[u8; 16],
        node_id: &str,
        now: u64,
    ) -> Result<MeasurementProgram, ConsumeError> {
        let mut programs = self.programs.lock().unwrap();
        let entry = programs
            .get_mut(program_id)
            .ok_or(ConsumeError::UnknownChallenge)?;
        match entry.state {
            IssueState::Consumed => return Err(ConsumeError::Replay),
            IssueState::Expired => return Err(ConsumeError::Expired),
            IssueState::Issued => {}
        }
        if now > entry.program.expires_at() {
            entry.state = IssueState::Expired;
            return Err(ConsumeError::Expired);
        }
        if entry.program.node_id != node_id {
            return Err(ConsumeError::NodeMismatch);
        }
        entry.state = IssueState::Consumed;
        Ok(entry.program.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::generate_program;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use tempfile::TempDir;

    fn golden(id: &str, bytes: &[u8]) -> GoldenArtifact {
        GoldenArtifact {
            artifact_id: ArtifactId::new(id, "1"),
            bytes: bytes.to_vec(),
        }
    }

    fn store() -> GoldenStore {
        GoldenStore::from_artifacts(vec![
            golden("bin/app", b"the application"),
            golden("lib/core.so", b"shared library bytes"),
        ])
        .unwrap()
    }

    fn event(node: &str, ts: u64, status: CheckStatus, reason: &str) -> AuditEvent {
        AuditEvent {
            timestamp: ts,
            node_id: node.to_owned(),
            program_id: format!("{ts:032x}"),
            status,
            reason: reason.to_owned(),
        }
    }

    #[test]
    fn store_refuses_empty_and_duplicates() {
        assert!(matches!(
            GoldenStore::from_artifacts(vec![]).unwrap_err(),
            StoreError::Empty
        ));
        let dup = GoldenStore::from_artifacts(vec![golden("a", b"x"), golden("a", b"y")]);
        assert!(matches!(dup.unwrap_err(), StoreError::Duplicate(_)));
    }

    #[test]
    fn target_ids_follow_manifest_order() {
        let s = store();
        let ids: Vec<String> = s.target_ids().into_iter().map(|t| t.id).collect();
        assert_eq!(ids, ["bin/app", "lib/core.so"]);
    }

    #[test]
    fn load_reads_manifest_and_golden_copies() {
        let dir = TempDir::new().unwrap();
        std::fs::create_dir(dir.path().join("bin")).unwrap();
        std::fs::write(dir.path().join("bin/app"), b"app bytes").unwrap();
        std::fs::write(dir.path().join("conf.json"), b"{}").unwrap();
        let manifest = serde_json::json!([
            {"id": "bin/app", "version": "1", "path": "bin/app"},
            {"id": "conf.json", "version": "1", "path": "conf.json"},
        ]);
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, serde_json::to_vec(&manifest).unwrap()).unwrap();

        let s = GoldenStore::load(dir.path(), &mpath).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(&ArtifactId::new("bin/app", "1")).unwrap().bytes, b"app bytes");
        assert!(s.find_by_name("conf.json").is_some());
        assert!(s.find_by_name("missing").is_none());
    }

    #[test]
    fn load_names_the_missing_artifact() {
        let dir = TempDir::new().unwrap();
        let manifest = serde_json::json!([{"id": "gone", "version": "2", "path": "gone"}]);
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, serde_json::to_vec(&manifest).unwrap()).unwrap();
        let err = GoldenStore::load(dir.path(), &mpath).unwrap_err();
        assert!(err.to_string().contains("gone@2"), "{err}");
    }

    #[test]
    fn expected_digests_match_honest_execution() {
        let s = store();
        let mut rng = ChaCha20Rng::seed_from_u64(20);
        let program =
            generate_program("n", &s.target_ids(), &[], 0, 60, &mut rng).unwrap();
        let expected = s.expected_digests(&program).unwrap();
        let report = crate::program::execute_program(&program, &s, &crate::program::NoEnv).unwrap();
        assert_eq!(report.artifact_digests, expected);
    }

    #[test]
    fn registry_tracks_latest_status_and_history() {
        let registry = NodeRegistry::new(Box::new(MemoryAuditSink::new()));
        registry.record_status(&event("n1", 100, CheckStatus::Pass, "OK")).unwrap();
        registry
            .record_status(&event("n1", 200, CheckStatus::Fail, "DIGEST_MISMATCH"))
            .unwrap();
        let rec = registry.get("n1").unwrap();
        assert_eq!(rec.status, CheckStatus::Fail);
        assert_eq!(rec.last_check_at, 200);
        assert_eq!(rec.history.len(), 2);
        assert_eq!(registry.get_status("n1"), NodeStatus::Fail);
        assert_eq!(registry.get_status("never-seen"), NodeStatus::Unknown);
    }

    #[test]
    fn stale_pass_decays_to_unknown_but_fail_sticks() {
        let registry = NodeRegistry::new(Box::new(MemoryAuditSink::new()));
        registry.record_status(&event("p", 1000, CheckStatus::Pass, "OK")).unwrap();
        registry.record_status(&event("f", 1000, CheckStatus::Fail, "REPLAY")).unwrap();

        assert_eq!(registry.effective_status("p", 1000 + 3600, 3600), NodeStatus::Pass);
        assert_eq!(registry.effective_status("p", 1000 + 3601, 3600), NodeStatus::Unknown);
        assert_eq!(registry.effective_status("f", 1_000_000, 3600), NodeStatus::Fail);
        assert_eq!(registry.effective_status("ghost", 0, 3600), NodeStatus::Unknown);
    }

    #[test]
    fn audit_log_round_trips_through_disk() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("audit.log");
        let mut sink = FileAuditSink::open(&path).unwrap();
        let events = vec![
            event("n1", 1, CheckStatus::Pass, "OK"),
            event("n2", 2, CheckStatus::Fail, "EXPIRED"),
        ];
        for e in &events {
            sink.append(e).unwrap();
        }
        assert_eq!(read_audit_log(&path).unwrap(), events);

        // appends accumulate across reopen
        let mut sink = FileAuditSink::open(&path).unwrap();
        sink.append(&event("n1", 3, CheckStatus::Pass, "OK")).unwrap();
        assert_eq!(read_audit_log(&path).unwrap().len(), 3);
    }

    #[test]
    fn corrupt_audit_line_is_reported_with_its_number() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("audit.log");
        std::fs::write(
            &path,
            "{\"timestamp\":1,\"node_id\":\"n\",\"program_id\":\"00\",\"status\":\"PASS\",\"reason\":\"OK\"}\nnot json\n",
        )
        .unwrap();
        let err = read_audit_log(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn rebuilt_registry_equals_live_registry() {
        let sink = MemoryAuditSink::new();
        let live = NodeRegistry::new(Box::new(sink.clone()));
        for i in 0..50u64 {
            let node = format!("node-{}", i % 7);
            let status = if i % 3 == 0 { CheckStatus::Fail } else { CheckStatus::Pass };
            let reason = if i % 3 == 0 { "DIGEST_MISMATCH" } else { "OK" };
            live.record_status(&event(&node, 1000 + i, status, reason)).unwrap();
        }
        let rebuilt = NodeRegistry::rebuild(&sink.events(), Box::new(MemoryAuditSink::new()));
        assert_eq!(live.snapshot(), rebuilt.snapshot());
    }

    #[test]
    fn registry_reloads_from_log_file() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("audit.log");
        let live = NodeRegistry::load_from_log(&path).unwrap();
        live.record_status(&event("n1", 5, CheckStatus::Pass, "OK")).unwrap();
        live.record_status(&event("n2", 6, CheckStatus::Fail, "AUTH_FAIL")).unwrap();

        let reloaded = NodeRegistry::load_from_log(&path).unwrap();
        assert_eq!(live.snapshot(), reloaded.snapshot());
    }

    struct FailingSink;

    impl AuditSink for FailingSink {
        fn append(&mut self, _event: &AuditEvent) -> io::Result<()> {
            Err(io::Error::new(io::ErrorKind::Other, "disk full"))
        }
    }

    #[test]
    fn failed_audit_append_leaves_registry_untouched() {
        let registry = NodeRegistry::new(Box::new(FailingSink));
        let err = registry.record_status(&event("n1", 1, CheckStatus::Pass, "OK"));
        assert!(err.is_err());
        assert_eq!(registry.get_status("n1"), NodeStatus::Unknown);
    }

    fn issued_program(seed: u64, node: &str, now: u64, ttl: u32) -> MeasurementProgram {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        generate_program(node, &[ArtifactId::new("a", "1")], &[], now, ttl, &mut rng).unwrap()
    }

    #[test]
    fn consume_lifecycle() {
        let table = IssuanceTable::new();
        let p = issued_program(1, "n1", 1000, 60);
        let pid = p.program_id;
        table.register(p.clone());

        assert_eq!(table.state(&pid), Some(IssueState::Issued));
        let got = table.consume(&pid, "n1", 1030).unwrap();
        assert_eq!(got, p);
        assert_eq!(table.state(&pid), Some(IssueState::Consumed));
        assert_eq!(table.consume(&pid, "n1", 1031).unwrap_err(), ConsumeError::Replay);
    }

    #[test]
    fn unknown_challenge() {
        let table = IssuanceTable::new();
        assert_eq!(
            table.consume(&[0; 16], "n", 0).unwrap_err(),
            ConsumeError::UnknownChallenge
        );
    }

    #[test]
    fn expiry_boundary_is_inclusive() {
        let table = IssuanceTable::new();
        let p = issued_program(2, "n1", 1000, 60);
        let pid = p.program_id;
        table.register(p);
        // exactly at issued_at + ttl still verifies
        assert!(table.consume(&pid, "n1", 1060).is_ok());

        let p2 = issued_program(3, "n1", 1000, 60);
        let pid2 = p2.program_id;
        table.register(p2);
        assert_eq!(table.consume(&pid2, "n1", 1061).unwrap_err(), ConsumeError::Expired);
        assert_eq!(table.state(&pid2), Some(IssueState::Expired));
        // and stays expired even if asked again in time
        assert_eq!(table.consume(&pid2, "n1", 1000).unwrap_err(), ConsumeError::Expired);
    }

    #[test]
    fn node_mismatch_leaves_challenge_issued() {
        let table = IssuanceTable::new();
        let p = issued_program(4, "owner", 0, 60);
        let pid = p.program_id;
        table.register(p);
        assert_eq!(table.consume(&pid, "thief", 10).unwrap_err(), ConsumeError::NodeMismatch);
        assert_eq!(table.state(&pid), Some(IssueState::Issued));
        assert!(table.consume(&pid, "owner", 20).is_ok());
    }

    #[test]
    fn replay_wins_over_later_defects() {
        // once consumed, even an expired-looking or wrong-node retry reads
        // as a replay
        let table = IssuanceTable::new();
        let p = issued_program(5, "n1", 0, 60);
        let pid = p.program_id;
        table.register(p);
        table.consume(&pid, "n1", 1).unwrap();
        assert_eq!(table.consume(&pid, "other", 10_000).unwrap_err(), ConsumeError::Replay);
    }
}
