use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fedflow_core::builtin::{generate, Builtin};
use fedflow_core::data::FileTransferType;
use fedflow_core::profiler::{append_history, load_history};
use fedflow_core::scenario::{load_scenario, Scenario, ScenarioError, MB};
use fedflow_core::scheduler::SchedulerKind;
use fedflow_core::sim::{run, RunConfig, SimError};

#[derive(Parser)]
#[command(name = "fedflow", version, about = "Simulate workflow scheduling across federated endpoints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write CSV metrics.
    Run(Box<RunArgs>),
    /// Print a builtin scenario as JSON.
    Gen {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the summaries of two runs.
    Compare {
        #[arg(long)]
        out_a: PathBuf,
        #[arg(long)]
        out_b: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file.
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    scenario: Option<PathBuf>,
    /// Builtin scenario name instead of a file.
    #[arg(long)]
    builtin: Option<String>,
    /// Scale for --builtin.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    scheduler: Option<SchedulerKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Keep only this endpoint, moving all files and pins onto it.
    #[arg(long)]
    only_endpoint: Option<String>,
    #[arg(long)]
    poll_interval: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    sched_time_factor: Option<f64>,
    #[arg(long)]
    no_reschedule: bool,
    #[arg(long)]
    reschedule_period: Option<f64>,
    #[arg(long)]
    max_task_attempts: Option<u32>,
    #[arg(long)]
    transfer_concurrency: Option<usize>,
    #[arg(long)]
    max_transfer_retries: Option<u32>,
    #[arg(long)]
    transfer_failure_rate: Option<f64>,
    #[arg(long)]
    file_transfer_type: Option<FileTransferType>,
    #[arg(long)]
    local_copy_root: Option<PathBuf>,
    #[arg(long)]
    refresh_interval: Option<f64>,
    #[arg(long)]
    elasticity: bool,
    #[arg(long)]
    scale_interval: Option<f64>,
    #[arg(long)]
    probe_on_init: bool,
    #[arg(long)]
    probe_size_mb: Option<f64>,
    #[arg(long)]
    sync_lag: Option<f64>,
    /// Execution history to load before the run.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Append this run's execution records to a history file.
    #[arg(long)]
    save_history: Option<PathBuf>,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

fn io_failure(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 3, error: e.into() }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: e.into() }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Gen { name, scale, out } => cmd_gen(&name, scale, out.as_deref()),
        Command::Compare { out_a, out_b } => cmd_compare(&out_a, &out_b),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let mut scenario = match (&a.scenario, &a.builtin) {
        (Some(path), _) => {
            let mut s = load_scenario(path)?;
            if s.name.is_empty() {
                s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            }
            s
        }
        (None, Some(name)) => generate(name.parse::<Builtin>()?, a.scale)?,
        (None, None) => return Err(usage(anyhow::anyhow!("pass --scenario or --builtin"))),
    };
    if let Some(ep) = &a.only_endpoint {
        scenario = scenario.restrict_to(ep)?;
    }
    let mut cfg = RunConfig::from_scenario(&scenario);
    if let Some(v) = a.scheduler {
        cfg.scheduler = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.poll_interval {
        cfg.poll_interval = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v.max(1);
    }
    if let Some(v) = a.sched_time_factor {
        cfg.sched_time_factor = v;
    }
    if a.no_reschedule {
        cfg.reschedule = false;
    }
    if let Some(v) = a.reschedule_period {
        cfg.reschedule_period = v;
    }
    if let Some(v) = a.max_task_attempts {
        cfg.max_task_attempts = v.max(1);
    }
    if let Some(v) = a.transfer_concurrency {
        cfg.transfer_concurrency = v.max(1);
    }
    if let Some(v) = a.max_transfer_retries {
        cfg.max_transfer_retries = v;
    }
    if let Some(v) = a.transfer_failure_rate {
        if !(0.0..=1.0).contains(&v) {
            return Err(usage(anyhow::anyhow!("--transfer-failure-rate must be within [0, 1]")));
        }
        cfg.transfer_failure_rate = v;
    }
    if let Some(v) = a.file_transfer_type {
        cfg.file_transfer_type = v;
    }
    cfg.local_copy_root = a.local_copy_root.clone();
    if let Some(v) = a.refresh_interval {
        cfg.refresh_interval = v;
    }
    if a.elasticity {
        cfg.elasticity = true;
    }
    if let Some(v) = a.scale_interval {
        cfg.scale_interval = v;
    }
    if a.probe_on_init {
        cfg.probe_on_init = true;
    }
    if let Some(v) = a.probe_size_mb {
        cfg.probe_size = (v * MB).round() as u64;
    }
    if let Some(v) = a.sync_lag {
        cfg.sync_lag = v;
    }
    if let Some(path) = &a.history {
        cfg.history = load_history(path)
            .with_context(|| format!("loading history {}", path.display()))
            .map_err(io_failure)?;
    }

    let log = run(&scenario, &cfg)?;
    log.emit(&a.out)
        .with_context(|| format!("writing metrics to {}", a.out.display()))
        .map_err(io_failure)?;
    if let Some(path) = &a.save_history {
        append_history(path, &log.new_records)
            .with_context(|| format!("appending history {}", path.display()))
            .map_err(io_failure)?;
    }
    for f in &log.failures {
        eprintln!("task {} failed after {} attempts:", f.task, f.attempts);
        for e in &f.errors {
            eprintln!("  {e}");
        }
    }
    println!(
        "{} {}: makespan {:.1} s, {:.3} GB moved, {}/{} tasks done, {} failed, {} unrunnable",
        scenario.name,
        cfg.scheduler,
        log.makespan,
        log.transfer_gb(),
        log.tasks_done,
        log.tasks_total,
        log.tasks_failed,
        log.tasks_unrunnable
    );
    Ok(())
}

fn cmd_gen(name: &str, scale: f64, out: Option<&Path>) -> Result<(), Failure> {
    let scenario: Scenario = generate(name.parse::<Builtin>()?, scale)?;
    match out {
        Some(path) => scenario.save(path)?,
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{}", scenario.to_json()).map_err(io_failure)?;
        }
    }
    Ok(())
}

struct Summary {
    makespan: f64,
    transfer_gb: f64,
    label: String,
}

fn read_summary(dir: &Path) -> Result<Summary, Failure> {
    let path = dir.join("summary.csv");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(io_failure)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let row: Vec<&str> = lines
        .next()
        .ok_or_else(|| usage(anyhow::anyhow!("{} has no result row", path.display())))?
        .split(',')
        .collect();
    let field = |name: &str| -> Result<&str, Failure> {
        header
            .iter()
            .position(|h| *h == name)
            .and_then(|i| row.get(i).copied())
            .ok_or_else(|| usage(anyhow::anyhow!("{} lacks column {name}", path.display())))
    };
    let num = |name: &str| -> Result<f64, Failure> {
        field(name)?
            .parse()
            .map_err(|e| usage(anyhow::anyhow!("{}: bad {name}: {e}", path.display())))
    };
    Ok(Summary {
        makespan: num("makespan_s")?,
        transfer_gb: num("transfer_GB")?,
        label: format!("{}/{}", field("scenario")?, field("scheduler")?),
    })
}

fn pct(a: f64, b: f64) -> String {
    if a == 0.0 {
        "n/a".into()
    } else {
        format!("{:+.2}%", (b - a) / a * 100.0)
    }
}

fn cmd_compare(a: &Path, b: &Path) -> Result<(), Failure> {
    let sa = read_summary(a)?;
    let sb = read_summary(b)?;
    println!("a: {} ({})", sa.label, a.display());
    println!("b: {} ({})", sb.label, b.display());
    println!(
        "makespan_s   a={:.3} b={:.3} delta={:+.3} ({})",
        sa.makespan,
        sb.makespan,
        sb.makespan - sa.makespan,
        pct(sa.makespan, sb.makespan)
    );
    println!(
        "transfer_GB  a={:.6} b={:.6} delta={:+.6} ({})",
        sa.transfer_gb,
        sb.transfer_gb,
        sb.transfer_gb - sa.transfer_gb,
        pct(sa.transfer_gb, sb.transfer_gb)
    );
    Ok(())
}
