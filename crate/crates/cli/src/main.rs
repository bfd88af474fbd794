//! `sp2p`: operator entry points for the integrity-gated resource server and
//! its nodes. Build a golden manifest, serve checks, run a node against a
//! server, or run the adversary campaign against an in-process server.

mod config;

use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sp2p_core::{
    request_resource, run_campaign, run_check, serve_listener, synthetic_store, CheckOutcome,
    ClientState, DirArtifacts, GoldenStore, ManifestEntry, NodeRegistry, ScenarioKind,
    ServerContext, ServerTuning, StopCause, SystemClock, SystemEnv,
};
use walkdir::WalkDir;

use config::ServerConfig;

#[derive(Parser)]
#[command(name = "sp2p", version, about = "Integrity-checked peer resource sharing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a golden manifest covering every regular file under a directory.
    Manifest(ManifestArgs),
    /// Run the check server until interrupted.
    Serve(ServeArgs),
    /// Run a node: check in against a server and optionally fetch a resource.
    Node(NodeArgs),
    /// One-shot check. Exits 0 on PASS, 1 on FAIL or STOPPED, 2 on error.
    Check(CheckArgs),
    /// Run attack scenarios against an in-process server and report rates.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct ManifestArgs {
    /// Directory holding the golden artifact copies.
    dir: PathBuf,
    /// Manifest file to write; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// JSON config file (see ServerConfig keys).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured listen address.
    #[arg(long)]
    listen: Option<String>,
    /// Override the configured artifact directory.
    #[arg(long)]
    artifact_dir: Option<PathBuf>,
    /// Override the configured manifest path.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Override the configured audit log path.
    #[arg(long)]
    audit_log: Option<PathBuf>,
    /// Override the challenge time-to-live, in seconds.
    #[arg(long)]
    ttl: Option<u32>,
    /// Override how long a PASS keeps the resource gate open, in seconds.
    #[arg(long)]
    freshness: Option<u64>,
    /// Override the largest accepted frame, in bytes.
    #[arg(long)]
    max_frame: Option<usize>,
}

#[derive(Args)]
struct CheckArgs {
    /// Server address, host:port.
    #[arg(long)]
    server: String,
    /// Identity this node claims.
    #[arg(long)]
    id: String,
    /// Directory holding this node's artifact copies.
    #[arg(long)]
    dir: PathBuf,
    /// Seconds to wait for each server response.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args)]
struct NodeArgs {
    #[command(flatten)]
    check: CheckArgs,
    /// After a pass, fetch this resource over the same connection.
    #[arg(long, requires = "out")]
    fetch: Option<String>,
    /// File to write the fetched resource into.
    #[arg(long, requires = "fetch")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario kind, or "all".
    #[arg(long, default_value = "all")]
    scenario: String,
    /// Trials per scenario kind.
    #[arg(long, default_value_t = 50)]
    trials: u32,
    /// Campaign seed; fixed seed, fixed outcome.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Emit the report as JSON instead of the table.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Manifest(args) => cmd_manifest(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Node(args) => cmd_node(args),
        Command::Check(args) => cmd_check(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_manifest(args: ManifestArgs) -> Result<ExitCode> {
    if !args.dir.is_dir() {
        bail!("{} is not a readable directory", args.dir.display());
    }
    let mut entries = Vec::new();
    for item in WalkDir::new(&args.dir).follow_links(false) {
        let item = item.with_context(|| format!("walking {}", args.dir.display()))?;
        if !item.file_type().is_file() {
            continue;
        }
        let rel = item
            .path()
            .strip_prefix(&args.dir)
            .expect("walked path is under its root");
        let id: String = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        entries.push(ManifestEntry {
            id: id.clone(),
            version: "1".into(),
            path: id,
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let json = serde_json::to_string_pretty(&entries)?;
    match &args.output {
        Some(path) => fs::write(path, json.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    eprintln!("{} artifacts indexed", entries.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(args: ServeArgs) -> Result<ExitCode> {
    let mut cfg = ServerConfig::load(&args.config)?;
    if let Some(v) = args.listen {
        cfg.listen_addr = v;
    }
    if let Some(v) = args.artifact_dir {
        cfg.artifact_dir = v;
    }
    if let Some(v) = args.manifest {
        cfg.manifest_path = v;
    }
    if let Some(v) = args.audit_log {
        cfg.audit_log_path = v;
    }
    if let Some(v) = args.ttl {
        cfg.program_ttl_seconds = v;
    }
    if let Some(v) = args.freshness {
        cfg.pass_freshness_seconds = v;
    }
    if let Some(v) = args.max_frame {
        cfg.max_frame_bytes = v;
    }
    cfg.validate()?;

    let store = Arc::new(GoldenStore::load(&cfg.artifact_dir, &cfg.manifest_path)?);
    let registry = NodeRegistry::load_from_log(&cfg.audit_log_path)
        .with_context(|| format!("audit log {}", cfg.audit_log_path.display()))?;
    let tuning = ServerTuning {
        program_ttl_seconds: cfg.program_ttl_seconds,
        pass_freshness_seconds: cfg.pass_freshness_seconds,
        max_frame_bytes: cfg.max_frame_bytes,
        ..ServerTuning::default()
    };
    let ctx = Arc::new(ServerContext::with_entropy(
        store,
        registry,
        Arc::new(SystemClock),
        tuning,
    ));

    let listener = TcpListener::bind(&cfg.listen_addr)
        .with_context(|| format!("binding {}", cfg.listen_addr))?;
    // Announce the resolved address so :0 configs are usable.
    eprintln!(
        "listening on {} ({} protected artifacts)",
        listener.local_addr()?,
        ctx.store.len()
    );
    serve_listener(listener, ctx)?;
    Ok(ExitCode::SUCCESS)
}

/// Dial the server and run one complete check.
fn dial_and_check(args: &CheckArgs) -> Result<(TcpStream, CheckOutcome)> {
    if !args.dir.is_dir() {
        bail!("{} is not a readable directory", args.dir.display());
    }
    let mut stream = TcpStream::connect(&args.server)
        .with_context(|| format!("connecting to {}", args.server))?;
    let outcome = run_check(
        &mut stream,
        &args.id,
        &DirArtifacts::new(&args.dir),
        &SystemEnv,
        Duration::from_secs(args.timeout),
    );
    Ok((stream, outcome))
}

/// One verdict line on standard output; the exit code carries the same fact.
fn report_outcome(outcome: &CheckOutcome) -> u8 {
    match (&outcome.state, &outcome.stop_cause) {
        (ClientState::Running, _) => {
            println!("PASS");
            0
        }
        (_, Some(StopCause::ServerFail(reason))) => {
            println!("FAIL {reason}");
            1
        }
        (_, cause) => {
            let detail = cause
                .as_ref()
                .map(|c| c.describe())
                .unwrap_or_else(|| "no cause recorded".into());
            println!("STOPPED {detail}");
            1
        }
    }
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode> {
    let (_stream, outcome) = dial_and_check(&args)?;
    if let Some(id) = outcome.program_id {
        eprintln!("challenge {}", hex::encode(id));
    }
    Ok(ExitCode::from(report_outcome(&outcome)))
}

fn cmd_node(args: NodeArgs) -> Result<ExitCode> {
    let (mut stream, outcome) = dial_and_check(&args.check)?;
    let code = report_outcome(&outcome);
    if code != 0 {
        return Ok(ExitCode::from(code));
    }
    let (Some(resource), Some(out)) = (&args.fetch, &args.out) else {
        return Ok(ExitCode::SUCCESS);
    };
    let grant = request_resource(
        &mut stream,
        &args.check.id,
        resource,
        Duration::from_secs(args.check.timeout),
    )
    .with_context(|| format!("fetching {resource}"))?;
    match grant {
        Some(payload) => {
            fs::write(out, &payload).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("fetched {} ({} bytes) into {}", resource, payload.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("DENIED {resource}");
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let Some(kinds) = ScenarioKind::parse_selector(&args.scenario) else {
        bail!("unknown scenario {:?}; use one of honest, tampered-artifact, replay, bypass, precompute, forged-identity, strip-check, all", args.scenario);
    };
    let counts: Vec<(ScenarioKind, u32)> = kinds.iter().map(|k| (*k, args.trials)).collect();
    let store = synthetic_store(args.seed);
    let report = run_campaign(&store, &counts, args.seed);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report.to_json())?);
    } else {
        print!("{}", report.render_table());
    }
    Ok(if report.all_green() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
