use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dashaff::report::comparison_table;
use dashaff::{
    load_profile, profile_stats, run_fairness, run_session, summarize, synthesize_profile,
    AbrConfig, BandwidthProfile, BitrateLadder, CompareRow, EstimatorConfig, Export,
    FairnessConfig, Format, SimConfig, SynthKind,
};

#[derive(Parser)]
#[command(name = "dashaff", version, about = "Trace-driven DASH ABR simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one playback session and print its QoE report.
    Run(RunArgs),
    /// Simulate several clients sharing one bottleneck and report Jain's index.
    Fairness(FairnessArgs),
    /// Run AFF, avg-last-3 and EWMA on one profile and tabulate the results.
    Compare(CompareArgs),
    /// Print max/min/mean/stddev of a profile in Mbps.
    Stats(StatsArgs),
}

#[derive(Args, Clone)]
struct ProfileArgs {
    /// Bandwidth profile CSV (`time_s,bandwidth_kbps`) or a built-in name
    /// such as `fairness-table3`.
    #[arg(long, conflicts_with = "synth")]
    profile: Option<String>,
    /// Synthetic profile kind: test1, test2, test3 or test4.
    #[arg(long)]
    synth: Option<SynthKind>,
    /// Seed for synthetic profiles (and client start times in fairness runs).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Profile length in seconds. Defaults to 600 s for synthetic profiles
    /// and to twice the video length for CSV files.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args, Clone)]
struct PlayerArgs {
    /// Comma-separated representation bitrates in kbps.
    #[arg(long, default_value = "250,500,1000,2000")]
    ladder: String,
    #[arg(long, default_value_t = SimConfig::DEFAULT_TOTAL_SEGMENTS)]
    segments: usize,
    #[arg(long = "segment-duration", default_value_t = 2.0)]
    segment_duration: f64,
    #[arg(long = "panic-buffer", default_value_t = AbrConfig::DEFAULT_PANIC_BUFFER_S)]
    panic_buffer: f64,
    #[arg(long = "max-buffer", default_value_t = SimConfig::DEFAULT_MAX_BUFFER_S)]
    max_buffer: f64,
    /// Media seconds needed to resume after a stall (default: one segment).
    #[arg(long = "rebuffer-target")]
    rebuffer_target: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    #[command(flatten)]
    player: PlayerArgs,
    /// aff, ewma or avg3.
    #[arg(long, default_value = "aff")]
    estimator: EstimatorConfig,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "json")]
    format: Format,
    /// Also dump per-segment records as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct FairnessArgs {
    #[arg(long, default_value_t = FairnessConfig::DEFAULT_CLIENTS)]
    clients: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Profile CSV or built-in name.
    #[arg(long, default_value = dashaff::profiles::FAIRNESS_TABLE3)]
    profile: String,
    /// Profile length in seconds for CSV files.
    #[arg(long)]
    duration: Option<f64>,
    /// Measurement window as LO:HI seconds.
    #[arg(long, default_value = "50:350")]
    window: String,
    /// Clients start uniformly within this many seconds.
    #[arg(long, default_value_t = FairnessConfig::DEFAULT_JITTER_S)]
    jitter: f64,
    #[arg(long, default_value = "aff")]
    estimator: EstimatorConfig,
    #[arg(long, default_value = "250,500,1000,2000")]
    ladder: String,
    #[arg(long, default_value_t = FairnessConfig::DEFAULT_SEGMENTS)]
    segments: usize,
    #[arg(long, default_value = "json")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    #[command(flatten)]
    player: PlayerArgs,
    /// table, json or csv.
    #[arg(long, default_value = "table")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    profile: ProfileArgs,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

const DEFAULT_SYNTH_DURATION_S: f64 = 600.0;

fn parse_ladder(list: &str, segment_duration: f64) -> Result<BitrateLadder> {
    let bitrates = list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid ladder entry '{}'", s.trim()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BitrateLadder::new(bitrates, segment_duration)?)
}

fn parse_window(text: &str) -> Result<(f64, f64)> {
    let Some((lo, hi)) = text.split_once(':') else {
        bail!("window must look like LO:HI, got '{text}'");
    };
    let lo = lo.trim().parse().with_context(|| format!("invalid window start '{lo}'"))?;
    let hi = hi.trim().parse().with_context(|| format!("invalid window end '{hi}'"))?;
    Ok((lo, hi))
}

fn load_named_profile(name: &str, duration: Option<f64>, video_s: f64) -> Result<BandwidthProfile> {
    if let Some(p) = BandwidthProfile::builtin(name) {
        return Ok(match duration {
            Some(d) => BandwidthProfile::new(p.breakpoints().to_vec(), d)?,
            None => p,
        });
    }
    let text = std::fs::read_to_string(name)
        .with_context(|| format!("cannot read profile {name}"))?;
    let parsed = load_profile(&text, f64::MAX).with_context(|| format!("profile {name}"))?;
    let last = parsed.breakpoints().last().map_or(0.0, |&(t, _)| t);
    let duration = duration.unwrap_or_else(|| (2.0 * video_s).max(last + video_s));
    BandwidthProfile::new(parsed.breakpoints().to_vec(), duration)
        .with_context(|| format!("profile {name}"))
}

impl ProfileArgs {
    fn load(&self, video_s: f64) -> Result<BandwidthProfile> {
        match (&self.profile, self.synth) {
            (Some(name), _) => load_named_profile(name, self.duration, video_s),
            (None, Some(kind)) => Ok(synthesize_profile(
                kind,
                self.seed,
                self.duration.unwrap_or(DEFAULT_SYNTH_DURATION_S),
            )?),
            (None, None) => bail!("one of --profile or --synth is required"),
        }
    }
}

impl PlayerArgs {
    fn video_seconds(&self) -> f64 {
        self.segments as f64 * self.segment_duration
    }

    fn config(&self, estimator: EstimatorConfig) -> Result<SimConfig> {
        let ladder = parse_ladder(&self.ladder, self.segment_duration)?;
        let mut cfg = SimConfig::new(ladder, estimator).with_segments(self.segments);
        cfg.abr.panic_buffer_s = self.panic_buffer;
        cfg.max_buffer_s = self.max_buffer;
        if let Some(target) = self.rebuffer_target {
            cfg.rebuffer_target_s = target;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = args.player.config(args.estimator)?;
    let profile = args.profile.load(args.player.video_seconds())?;
    let trace = run_session(&profile, &cfg)?;
    if let Some(path) = &args.trace {
        let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        trace.write_records_csv(BufWriter::new(file))?;
    }
    let report = summarize(&trace, &cfg.ladder);
    report.export(args.format, sink(args.out.as_deref())?)?;
    Ok(())
}

fn cmd_fairness(args: FairnessArgs) -> Result<()> {
    let ladder = parse_ladder(&args.ladder, 2.0)?;
    let session = SimConfig::new(ladder, args.estimator).with_segments(args.segments);
    let profile = load_named_profile(&args.profile, args.duration, session.total_segments as f64 * 2.0)?;
    let cfg = FairnessConfig {
        n_clients: args.clients,
        start_jitter_s: args.jitter,
        window: parse_window(&args.window)?,
        profile,
        session,
        rng_seed: args.seed,
    };
    let result = run_fairness(&cfg)?;
    result.export(args.format, sink(args.out.as_deref())?)?;
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let profile = args.profile.load(args.player.video_seconds())?;
    let mut rows = Vec::new();
    for estimator in EstimatorConfig::all_defaults() {
        let cfg = args.player.config(estimator)?;
        let trace = run_session(&profile, &cfg)
            .with_context(|| format!("{} session", estimator.label()))?;
        rows.push(CompareRow::new(&estimator, &summarize(&trace, &cfg.ladder)));
    }
    let mut out = sink(args.out.as_deref())?;
    match args.format.to_ascii_lowercase().as_str() {
        "table" => out.write_all(comparison_table(&rows).as_bytes())?,
        other => rows.export(other.parse::<Format>()?, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let video_s = SimConfig::DEFAULT_TOTAL_SEGMENTS as f64 * 2.0;
    let stats = profile_stats(&args.profile.load(video_s)?);
    let mut out = io::stdout().lock();
    if args.json {
        serde_json::to_writer(&mut out, &stats)?;
        writeln!(out)?;
    } else {
        writeln!(
            out,
            "max {:.4} Mbps  min {:.4} Mbps  avg {:.4} Mbps  sd {:.4} Mbps",
            stats.max_mbps, stats.min_mbps, stats.avg_mbps, stats.stddev_mbps
        )?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Fairness(a) => cmd_fairness(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
