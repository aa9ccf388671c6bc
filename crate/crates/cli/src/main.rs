use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};

use canal_bridge::{replay, Bridge};
use canal_cli::{benchmark, export_episode, parse_scenario, run_batch, ExperimentSpec, ExportFormat};
use canal_core::engine::{Mode, Simulation};
use canal_core::{EpisodeLog, PlannerParams};

#[derive(Parser)]
#[command(name = "canal", version, about = "Multi-vessel MPPI planning in urban canals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario's mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Directory for the episode log and metrics.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        export: Option<ExportFormat>,
        /// Stream frames and accept teleop commands on this address.
        /// The episode is then paced at wall-clock rate.
        #[arg(long)]
        serve: Option<String>,
        /// With --serve, wait for a client before starting.
        #[arg(long)]
        wait_client: bool,
    },
    /// Run seeded sweeps over one or more modes.
    Batch {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Seed of run 0; run i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Repeatable. Defaults to all three modes.
        #[arg(long)]
        mode: Vec<Mode>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        export: Option<ExportFormat>,
        /// Episodes run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Stream a recorded episode log through the bridge.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        serve: String,
        /// Playback speed relative to wall clock.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        #[arg(long)]
        wait_client: bool,
        /// Write the log as a table instead of serving it.
        #[arg(long)]
        export: Option<ExportFormat>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean plan-call wall time for growing agent counts.
    Benchmark {
        /// Repeatable.
        #[arg(long, default_values_t = [1usize, 2, 3, 4])]
        agents: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        calls: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the reports as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn wait_for_client(bridge: &Bridge) {
    eprintln!("waiting for a client on ws://{}", bridge.local_addr());
    while bridge.client_count() == 0 {
        std::thread::sleep(Duration::from_millis(20));
    }
}

fn cmd_run(
    scenario: PathBuf,
    seed: Option<u64>,
    mode: Option<Mode>,
    out: Option<PathBuf>,
    export: Option<ExportFormat>,
    serve: Option<String>,
    wait_client: bool,
) -> Result<ExitCode> {
    let mut cfg = parse_scenario(&scenario)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let seed = seed.unwrap_or(cfg.seed);
    let mut sim = Simulation::new(&cfg, seed)?;
    let bridge = match &serve {
        Some(addr) => {
            let b = Bridge::bind(addr.as_str())?;
            eprintln!("serving on ws://{}", b.local_addr());
            if wait_client {
                wait_for_client(&b);
            }
            sim.attach_sink(b.sink());
            Some(b)
        }
        None => None,
    };
    let period = Duration::from_secs_f64(cfg.control_period_s);
    let outcome = loop {
        let started = Instant::now();
        if let Some(o) = sim.step(bridge.as_ref().map(|b| b.teleop())) {
            break o;
        }
        if bridge.is_some() {
            if let Some(rest) = period.checked_sub(started.elapsed()) {
                std::thread::sleep(rest);
            }
        }
    };
    let (metrics, log) = sim.finish();
    println!(
        "{} seed={} mode={} time={:.1}s violations={} distance={:.1}m plan={:.1}ms",
        outcome.name(),
        metrics.seed,
        metrics.mode.name(),
        metrics.time_to_completion_s,
        metrics.rule_violation_events,
        metrics.total_distance_m,
        metrics.mean_plan_ms()
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        log.write_jsonl(BufWriter::new(File::create(dir.join("episode.jsonl"))?))?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
        if let Some(fmt) = export {
            export_episode(&log, fmt, &dir.join(format!("episode.{}", fmt.extension())))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_batch(
    scenario: PathBuf,
    runs: usize,
    seed: u64,
    mode: Vec<Mode>,
    out: PathBuf,
    export: Option<ExportFormat>,
    jobs: usize,
) -> Result<ExitCode> {
    let cfg = parse_scenario(&scenario)?;
    let modes = if mode.is_empty() { Mode::ALL.to_vec() } else { mode };
    let mut spec = ExperimentSpec::new(scenario, runs, seed, modes);
    spec.out_dir = Some(out.clone());
    spec.export = export;
    spec.jobs = jobs;
    let result = run_batch(&cfg, &spec)?;
    println!(
        "{:<12} {:>4} {:>4} {:>4} {:>4} {:>5} {:>8} {:>9} {:>12}",
        "mode", "ok", "dl", "col", "err", "viol", "time_s", "dist_m", "plan_ms"
    );
    for m in &result.report.modes {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<12} {:>4} {:>4} {:>4} {:>4} {:>5} {:>8} {:>9} {:>12}",
            m.mode.name(),
            m.success,
            m.deadlock,
            m.collision,
            m.errors,
            m.violations_in_successful_runs,
            f(m.mean_time_s),
            f(m.mean_total_distance_m),
            format!("{}+-{}", f(m.plan_ms_mean), f(m.plan_ms_std)),
        );
    }
    for r in &result.records {
        if let Err(e) = &r.result {
            eprintln!("run {} ({}, seed {}): {e}", r.run, r.mode.name(), r.seed);
        }
    }
    eprintln!("results written to {}", out.display());
    Ok(if result.any_error() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_replay(
    log: PathBuf,
    serve: String,
    rate: f64,
    wait_client: bool,
    export: Option<ExportFormat>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let episode = EpisodeLog::read_jsonl(BufReader::new(File::open(&log)?))?;
    if let Some(fmt) = export {
        let path = out.unwrap_or_else(|| log.with_extension(fmt.extension()));
        export_episode(&episode, fmt, &path)?;
        eprintln!("wrote {}", path.display());
        return Ok(ExitCode::SUCCESS);
    }
    if rate.is_nan() || rate <= 0.0 {
        return Err(format!("rate must be positive, got {rate}").into());
    }
    let bridge = Bridge::bind(serve.as_str())?;
    eprintln!("serving on ws://{}", bridge.local_addr());
    if wait_client {
        wait_for_client(&bridge);
    }
    replay(&episode, bridge.sink().as_ref(), rate);
    // Let clients drain the final messages.
    std::thread::sleep(Duration::from_millis(200));
    Ok(ExitCode::SUCCESS)
}

fn cmd_benchmark(
    agents: Vec<usize>,
    calls: usize,
    samples: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let params = PlannerParams {
        samples,
        seed,
        ..PlannerParams::default()
    };
    let mut reports = Vec::new();
    println!("{:>6} {:>8} {:>10} {:>8}", "agents", "samples", "mean_ms", "std_ms");
    for n in agents {
        let r = benchmark(n, calls, params)?;
        println!("{:>6} {:>8} {:>10.1} {:>8.1}", r.agents, r.samples, r.mean_ms, r.std_ms);
        reports.push(r);
    }
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&reports)? + "\n")?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            mode,
            out,
            export,
            serve,
            wait_client,
        } => cmd_run(scenario, seed, mode, out, export, serve, wait_client),
        Command::Batch {
            scenario,
            runs,
            seed,
            mode,
            out,
            export,
            jobs,
        } => cmd_batch(scenario, runs, seed, mode, out, export, jobs),
        Command::Replay {
            log,
            serve,
            rate,
            wait_client,
            export,
            out,
        } => cmd_replay(log, serve, rate, wait_client, export, out),
        Command::Benchmark {
            agents,
            calls,
            samples,
            seed,
            out,
        } => cmd_benchmark(agents, calls, samples, seed, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
