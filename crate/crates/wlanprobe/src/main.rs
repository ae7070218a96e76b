use std::io::Write;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use wlanprobe::diagnose::{analyze_trace, DiagnoseConfig, Diagnosis, Profile};
use wlanprobe::rate::TrainRateStatus;
use wlanprobe::report::verdict_matrix;
use wlanprobe::schedule::ProbeSchedule;
use wlanprobe::sim::{
    save_truth, scenario_preset, simulate, ChannelModel, Intensity, ScenarioKind,
};
use wlanprobe::trace::{load_trace_path, save_trace_path, validate_trace};
use wlanprobe::wire::{run_sender, ProbeReceiver, DEFAULT_PORT};

/// Active probing and diagnosis of 802.11 uplink pathologies.
#[derive(Parser)]
#[command(name = "wlanprobe", version, about)]
struct Cli {
    /// Print progress details to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Send or receive probing packet trains over UDP.
    Probe {
        #[command(subcommand)]
        side: ProbeSide,
    },
    /// Generate a trace (plus ground truth) from the channel simulator.
    Simulate(SimulateArgs),
    /// Run the decision tree over a trace and emit a report.
    Diagnose(DiagnoseArgs),
    /// Summarize diagnosis reports into a scenario/verdict matrix.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum ProbeSide {
    /// Transmit the probing schedule to a receiver.
    Send(SendArgs),
    /// Receive probes and assemble the trace.
    Recv(RecvArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    /// Mixed packet sizes; full decision tree.
    Standard,
    /// Maximum-size packets; correlation classifier only.
    Ht,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Schedule seed; sender and receiver must agree.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of packet trains.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..=10_000))]
    trains: u32,
    /// Packets per train.
    #[arg(long = "train-len", default_value_t = 50, value_parser = clap::value_parser!(u32).range(2..=10_000))]
    train_len: u32,
    /// Probing profile.
    #[arg(long, value_enum, default_value_t = ProfileArg::Standard)]
    profile: ProfileArg,
}

impl ScheduleArgs {
    fn schedule(&self, gap_s: f64) -> ProbeSchedule {
        let base = ProbeSchedule {
            n_trains: self.trains,
            packets_per_train: self.train_len,
            inter_train_gap_s: gap_s,
            rng_seed: self.seed,
            ..Default::default()
        };
        match self.profile {
            ProfileArg::Standard => base,
            ProfileArg::Ht => base.ht_profile(),
        }
    }
}

#[derive(Args)]
struct SendArgs {
    /// Receiver address, host:port.
    #[arg(long)]
    dest: String,
    /// Idle seconds between trains.
    #[arg(long = "gap-s", default_value_t = 1.0)]
    gap_s: f64,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args)]
struct RecvArgs {
    /// Listen address, host:port or :port.
    #[arg(long, default_value_t = format!(":{DEFAULT_PORT}"))]
    listen: String,
    /// Trace output path (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Give up after this many seconds without a datagram.
    #[arg(long = "timeout-s", default_value_t = 30.0)]
    timeout_s: f64,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    Normal,
    LowSnr,
    Congestion,
    Sht,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(value: ScenarioArg) -> Self {
        match value {
            ScenarioArg::Normal => ScenarioKind::Normal,
            ScenarioArg::LowSnr => ScenarioKind::LowSnr,
            ScenarioArg::Congestion => ScenarioKind::Congestion,
            ScenarioArg::Sht => ScenarioKind::Sht,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum IntensityArg {
    Mild,
    Severe,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long, value_enum, default_value_t = IntensityArg::Severe)]
    intensity: IntensityArg,
    /// Trace output path (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth output path (JSON Lines).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Trace to diagnose (JSON Lines).
    #[arg(long = "in")]
    input: PathBuf,
    /// Report output path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Significance level for the size-trend test.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Ratio above which a size-dependent pathology is called low SNR.
    #[arg(long = "ratio-threshold", default_value_t = 4.0)]
    ratio_threshold: f64,
    /// Profile the trace was collected with.
    #[arg(long, value_enum, default_value_t = ProfileArg::Standard)]
    profile: ProfileArg,
    /// Ground-truth file; copies its scenario label into the report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Write per-train rate inference results (JSON Lines) here.
    #[arg(long = "rates-report")]
    rates_report: Option<PathBuf>,
    /// Write per-packet access delays (JSON Lines) here.
    #[arg(long = "delays-report")]
    delays_report: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Diagnosis reports (JSON) to aggregate.
    #[arg(long = "in", num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Write the matrix here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Probe { side } => match side {
            ProbeSide::Send(args) => probe_send(args, cli.verbose),
            ProbeSide::Recv(args) => probe_recv(args, cli.verbose),
        },
        Command::Simulate(args) => run_simulate(args, cli.verbose),
        Command::Diagnose(args) => run_diagnose(args, cli.verbose),
        Command::Report(args) => run_report(args),
    }
}

fn resolve_addr(spec: &str) -> Result<SocketAddr> {
    let spec = if spec.starts_with(':') { format!("0.0.0.0{spec}") } else { spec.to_string() };
    spec.to_socket_addrs()
        .with_context(|| format!("cannot resolve address {spec:?}"))?
        .next()
        .with_context(|| format!("no usable address for {spec:?}"))
}

fn probe_send(args: SendArgs, verbose: bool) -> Result<()> {
    let dest = resolve_addr(&args.dest)?;
    let schedule = args.schedule.schedule(args.gap_s);
    if verbose {
        eprintln!(
            "sending {} trains x {} packets to {dest}, {}s between trains",
            schedule.n_trains, schedule.packets_per_train, schedule.inter_train_gap_s
        );
    }
    let log = run_sender(&schedule, dest).context("probe sender failed")?;
    println!("sent {} packets in {} trains to {dest}", log.probes.len(), schedule.n_trains);
    Ok(())
}

fn probe_recv(args: RecvArgs, verbose: bool) -> Result<()> {
    let listen = resolve_addr(&args.listen)?;
    let schedule = args.schedule.schedule(1.0);
    let receiver = ProbeReceiver::bind(listen, schedule.clone()).context("receiver setup failed")?;
    // Always announced: lets callers discover an ephemeral port.
    eprintln!("listening on {}", receiver.local_addr()?);
    let trace = receiver
        .run(Duration::from_secs_f64(args.timeout_s))
        .context("probe receiver failed")?;
    let received = trace.record_count() - trace.loss_count();
    save_trace_path(&trace, &args.out)
        .with_context(|| format!("cannot write trace to {}", args.out.display()))?;
    if verbose {
        let report = validate_trace(&trace);
        for v in &report.violations {
            eprintln!("trace invariant violated: {v}");
        }
    }
    println!(
        "received {received}/{} packets ({} lost); trace written to {}",
        trace.record_count(),
        trace.loss_count(),
        args.out.display()
    );
    Ok(())
}

fn run_simulate(args: SimulateArgs, verbose: bool) -> Result<()> {
    let schedule = args.schedule.schedule(1.0);
    let intensity = match args.intensity {
        IntensityArg::Mild => Intensity::Mild,
        IntensityArg::Severe => Intensity::Severe,
    };
    let scenario =
        scenario_preset(args.scenario.into(), intensity).with_seed(args.schedule.seed);
    let channel = ChannelModel::default();
    let (trace, truth) = simulate(&schedule, &scenario, &channel)?;
    save_trace_path(&trace, &args.out)
        .with_context(|| format!("cannot write trace to {}", args.out.display()))?;
    if let Some(path) = &args.truth {
        let file = std::fs::File::create(path)
            .with_context(|| format!("cannot write ground truth to {}", path.display()))?;
        save_truth(&truth, std::io::BufWriter::new(file))?;
    }
    if verbose {
        eprintln!(
            "simulated {} packets, {} lost",
            trace.record_count(),
            trace.loss_count()
        );
    }
    println!(
        "simulated {} scenario (seed {}) -> {}",
        scenario.kind.label(),
        args.schedule.seed,
        args.out.display()
    );
    Ok(())
}

fn run_diagnose(args: DiagnoseArgs, verbose: bool) -> Result<()> {
    let trace = load_trace_path(&args.input)
        .with_context(|| format!("cannot load trace {}", args.input.display()))?;
    let cfg = DiagnoseConfig {
        alpha: args.alpha,
        ratio_threshold: args.ratio_threshold,
        profile: match args.profile {
            ProfileArg::Standard => Profile::Standard,
            ProfileArg::Ht => Profile::Ht,
        },
        ..Default::default()
    };
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        bail!("--alpha must be in (0, 1)");
    }
    if args.ratio_threshold <= 0.0 {
        bail!("--ratio-threshold must be positive");
    }
    let analysis = analyze_trace(&trace, &cfg);
    let mut diagnosis = analysis.diagnosis.clone();
    if let Some(path) = &args.truth {
        let truth = wlanprobe::sim::load_truth_path(path)
            .with_context(|| format!("cannot load ground truth {}", path.display()))?;
        diagnosis.scenario_label = Some(truth.scenario);
    }

    if let Some(path) = &args.rates_report {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for train in &analysis.rates.trains {
            let line = serde_json::json!({
                "train": train.train_id,
                "mode_rate": train.mode.map(|m| m.as_mbps()),
                "mode_fraction": train.mode_fraction,
                "status": match train.status {
                    TrainRateStatus::Ok => "ok",
                    TrainRateStatus::TooNoisy => "too_noisy",
                },
            });
            writeln!(file, "{line}")?;
        }
    }
    if let Some(path) = &args.delays_report {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for record in &analysis.delays {
            writeln!(file, "{}", serde_json::to_string(record)?)?;
        }
    }

    print_verdict_line(&diagnosis);
    if verbose {
        if let Some(reason) = &diagnosis.abort_reason {
            eprintln!("abort reason: {reason}");
        }
    }
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&diagnosis)?;
        std::fs::write(path, json + "\n")
            .with_context(|| format!("cannot write report to {}", path.display()))?;
    }
    Ok(())
}

fn print_verdict_line(d: &Diagnosis) {
    let mut extras = Vec::new();
    if let Some(k) = &d.kendall {
        extras.push(format!("kendall p={:.4}", k.p));
    }
    if let Some(r) = &d.ratio {
        extras.push(format!("ratio={:.2}", r.value));
    }
    if let Some(reason) = &d.abort_reason {
        extras.push(reason.clone());
    }
    if extras.is_empty() {
        println!("verdict: {}", d.verdict);
    } else {
        println!("verdict: {} ({})", d.verdict, extras.join(", "));
    }
}

fn run_report(args: ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &args.inputs {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                continue;
            }
        };
        match serde_json::from_str::<Diagnosis>(&text) {
            Ok(report) => reports.push(report),
            Err(e) => eprintln!("warning: skipping {}: malformed report: {e}", path.display()),
        }
    }
    if reports.is_empty() {
        bail!("no valid reports among {} inputs", args.inputs.len());
    }
    let table = verdict_matrix(&reports)?;
    match &args.out {
        Some(path) => std::fs::write(path, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}
