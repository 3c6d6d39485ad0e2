use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use repli_bench::leader::{run_leader_failure, LeaderFailureParams};
use repli_bench::ordering::run_ordering_point;
use repli_bench::output::{write_leader, write_ordering, write_overhead};
use repli_bench::overhead::{run_sweep, Backend, DEFAULT_BACKLOGS, DEFAULT_EVENTS};
use repli_core::architecture::{parse_resilience_config, Lsa};
use repli_core::consolidate::ConsolidatorRegistry;
use repli_core::deploy::{emit_artifacts, parse_devices, plan_deployment};
use repli_core::model::UnitId;
use repli_core::transform::{setup_replication, PlacementHints, Resa};

#[derive(Parser)]
#[command(
    name = "repli",
    version,
    about = "Replicate event-driven component architectures and benchmark them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn an architecture plus resilience config into a replicated architecture.
    Transform {
        #[arg(long)]
        lsa: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// JSON map from component id to candidate unit ids for its replicas.
        #[arg(long)]
        hints: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Place a replicated architecture on devices and emit deployment artifacts.
    Plan {
        #[arg(long)]
        resa: PathBuf,
        #[arg(long)]
        devices: PathBuf,
        /// Pin a unit to a device, as `unit=device`. Repeatable.
        #[arg(long = "pin", value_name = "UNIT=DEVICE", value_parser = parse_pin)]
        pins: Vec<(UnitId, String)>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark and write CSV files and plots.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Ordering,
    Overhead,
    LeaderFailure,
}

#[derive(Args)]
struct BenchArgs {
    experiment: Experiment,
    /// Run in the deterministic simulator.
    #[arg(long, conflicts_with = "sockets")]
    sim: bool,
    /// Run every unit on its own thread over loopback TCP.
    #[arg(long)]
    sockets: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Backlog sizes for the overhead sweep.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    backlog: Vec<u64>,
    /// Client counts for the ordering benchmark.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    clients: Vec<u32>,
    /// Request payload size for the ordering benchmark (0 or 1024).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    payload: Vec<usize>,
    /// Leader crash time in seconds.
    #[arg(long, default_value_t = 18)]
    crash_at: u64,
    /// Events per overhead run.
    #[arg(long, default_value_t = DEFAULT_EVENTS)]
    events: u64,
    /// Requests per client in the ordering benchmark.
    #[arg(long, default_value_t = 500)]
    requests: u64,
    /// Offered load of the leader-failure run, events per second.
    #[arg(long, default_value_t = 50)]
    workload: u64,
    /// Length of the leader-failure run in seconds.
    #[arg(long, default_value_t = 60)]
    duration: u64,
    /// Crash a backup replica instead of the leader.
    #[arg(long)]
    crash_backup: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_pin(s: &str) -> Result<(UnitId, String), String> {
    match s.split_once('=') {
        Some((u, d)) if !u.is_empty() && !d.is_empty() => {
            Ok((UnitId(u.to_string()), d.to_string()))
        }
        _ => Err(format!("expected unit=device, got `{s}`")),
    }
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn transform(lsa: &Path, config: &Path, hints: Option<&Path>, out: &Path) -> Result<(), String> {
    let lsa = Lsa::from_json(&read(lsa)?).map_err(|e| format!("architecture: {e}"))?;
    let reg = ConsolidatorRegistry::with_builtins();
    let cfg = parse_resilience_config(read(config)?.as_bytes(), &reg).map_err(|e| e.to_string())?;
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    let hints: PlacementHints = match hints {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| format!("hints: {e}"))?,
        None => PlacementHints::new(),
    };
    let resa = setup_replication(&lsa, &cfg, &hints, &reg).map_err(|e| e.to_string())?;
    std::fs::write(out, resa.to_json()).map_err(|e| e.to_string())?;
    println!(
        "{} replicas, {} frontends, {} replica proxies, {} consolidators",
        resa.groups
            .iter()
            .map(|g| g.replica_ids.len())
            .sum::<usize>(),
        resa.frontends.len(),
        resa.replica_proxies.len(),
        resa.consolidators.len()
    );
    Ok(())
}

fn plan(
    resa: &Path,
    devices: &Path,
    pins: &[(UnitId, String)],
    seed: u64,
    out: &Path,
) -> Result<(), String> {
    let resa =
        Resa::from_json(&read(resa)?).map_err(|e| format!("replicated architecture: {e}"))?;
    let devices = parse_devices(&read(devices)?).map_err(|e| e.to_string())?;
    let pins: BTreeMap<UnitId, String> = pins.iter().cloned().collect();
    let plan = plan_deployment(&resa, &devices, &pins, seed).map_err(|e| e.to_string())?;
    for (path, bytes) in emit_artifacts(&plan, &resa) {
        let target = out.join(&path);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
        }
        std::fs::write(&target, bytes).map_err(|e| e.to_string())?;
        println!("{}", target.display());
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<(), String> {
    let backend = if a.sockets {
        Backend::Sockets
    } else {
        Backend::Sim { seed: a.seed }
    };
    let files = match a.experiment {
        Experiment::Ordering => {
            let clients = if a.clients.is_empty() {
                vec![1, 2, 4, 8, 16]
            } else {
                a.clients.clone()
            };
            let payloads = if a.payload.is_empty() {
                vec![0]
            } else {
                a.payload.clone()
            };
            let mut points = Vec::new();
            for b in payloads {
                for c in &clients {
                    let p = run_ordering_point(*c, b, a.requests, backend)
                        .map_err(|e| e.to_string())?;
                    println!(
                        "clients={c} payload={b}B throughput={:.1} op/s latency={:.2} ms",
                        p.throughput, p.latency_ms
                    );
                    points.push(p);
                }
            }
            write_ordering(&a.out, &points)
        }
        Experiment::Overhead => {
            let backlogs = if a.backlog.is_empty() {
                DEFAULT_BACKLOGS.to_vec()
            } else {
                a.backlog.clone()
            };
            let payload = a
                .payload
                .first()
                .copied()
                .unwrap_or(repli_bench::workload::DEFAULT_PAYLOAD);
            let baseline = run_sweep(&backlogs, a.events, false, payload, backend)
                .map_err(|e| e.to_string())?;
            let replicated = run_sweep(&backlogs, a.events, true, payload, backend)
                .map_err(|e| e.to_string())?;
            for (name, pts) in [("baseline", &baseline), ("replicated", &replicated)] {
                for p in pts {
                    println!(
                        "{name} backlog={} throughput={:.1} op/s latency={:.2} ms little={:.2}",
                        p.backlog,
                        p.summary.throughput,
                        p.summary.latency_ms,
                        p.summary.little_ratio
                    );
                }
            }
            write_overhead(
                &a.out,
                &[("baseline", &baseline), ("replicated", &replicated)],
            )
        }
        Experiment::LeaderFailure => {
            if a.sockets {
                return Err("leader-failure runs in the simulator only".into());
            }
            let params = LeaderFailureParams {
                workload: a.workload,
                crash_at_s: a.crash_at,
                duration_s: a.duration,
                seed: a.seed,
                crash_leader: !a.crash_backup,
                ..LeaderFailureParams::default()
            };
            let r = run_leader_failure(&params).map_err(|e| e.to_string())?;
            println!(
                "crashed {} at {} s; outage {:.1} s; recovered after {:?} s; peak latency {:.0} ms; {} of {} events delivered",
                r.crashed_unit,
                params.crash_at_s,
                r.outage_s,
                r.recovery_s(params.crash_at_s),
                r.peak_latency_ms,
                r.delivered,
                r.emitted
            );
            write_leader(&a.out, &params, &r)
        }
    };
    for f in files.map_err(|e| e.to_string())? {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Transform {
            lsa,
            config,
            hints,
            out,
        } => transform(lsa, config, hints.as_deref(), out),
        Command::Plan {
            resa,
            devices,
            pins,
            seed,
            out,
        } => plan(resa, devices, pins, *seed, out),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
