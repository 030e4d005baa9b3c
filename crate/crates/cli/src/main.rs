//! `modes-toa`: synthesize two-receiver traces, decode them, estimate
//! per-packet TOA and evaluate precision.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use modes_toa::eval::{self, DEFAULT_MAX_ORDER};
use modes_toa::iq::{meta_path_for, read_stream, write_atomic, write_stream, IqStream};
use modes_toa::pipeline::{estimate, read_jsonl, write_jsonl, EstimatePlan, ScenarioConfig};
use modes_toa::receiver::{detect_and_decode_with_stats, DecodedPacket, ReceiverConfig};
use modes_toa::synth::generate_two_receiver_trace;
use modes_toa::toa::{Method, ToaRecord};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod report;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "modes-toa", version, about = "Nanosecond TOA estimation for Mode S packets")]
struct Cli {
    /// Seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a two-receiver IQ trace and its ground truth.
    Synth(SynthArgs),
    /// Detect and decode packets in an IQ file.
    Decode(DecodeArgs),
    /// Decode an IQ file and estimate the TOA of every packet.
    Estimate(EstimateArgs),
    /// Pair two receivers' TOA records, remove the clock drift and report
    /// precision per method and class.
    Evaluate(EvaluateArgs),
    /// Print a report CSV as a table of sigma per class.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_rx1: PathBuf,
    #[arg(long)]
    out_rx2: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Raw interleaved IQ file.
    #[arg(long)]
    iq: PathBuf,
    /// Sidecar metadata (default: `<iq>.json`).
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    receiver_id: u32,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated method names, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all", value_parser = parse_methods)]
    methods: Vec<Vec<Method>>,
    /// Comma-separated upsampling factors.
    #[arg(long = "n", value_delimiter = ',', default_value = "25", value_parser = clap::value_parser!(u32).range(1..=128))]
    factors: Vec<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    rx1: PathBuf,
    #[arg(long)]
    rx2: PathBuf,
    /// Written as `<prefix>report.csv`, `<prefix>ecdf.csv`, `<prefix>qq.csv`.
    #[arg(long)]
    out_prefix: String,
    #[arg(long, default_value_t = DEFAULT_MAX_ORDER as u32, value_parser = clap::value_parser!(u32).range(0..=10))]
    max_order: u32,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report CSV written by `evaluate`.
    #[arg(long)]
    input: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    if s == "all" {
        return Ok(Method::ALL.to_vec());
    }
    s.parse::<Method>().map(|m| vec![m]).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Decode(a) => {
            let packets = decode_input(&a.input)?;
            let records: Vec<_> = packets.iter().map(DecodedPacket::record).collect();
            write_jsonl(&a.out, &records).with_context(|| format!("writing {}", a.out.display()))
        }
        Command::Estimate(a) => {
            let methods: Vec<Method> = a.methods.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect();
            let plan = EstimatePlan::new(methods, a.factors.iter().map(|&n| n as usize).collect())?;
            let packets = decode_input(&a.input)?;
            let records = estimate(&packets, &plan)?;
            log::info!("{} records for {} packets", records.len(), packets.len());
            write_jsonl(&a.out, &records).with_context(|| format!("writing {}", a.out.display()))
        }
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => {
            let csv = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            let table = report::render(&csv)?;
            match &a.out {
                Some(p) => write_atomic(p, table.as_bytes()).with_context(|| format!("writing {}", p.display())),
                None => {
                    print!("{table}");
                    Ok(())
                }
            }
        }
    }
}

fn synth(a: &SynthArgs, seed: u64) -> anyhow::Result<()> {
    let config = ScenarioConfig::load(&a.scenario)?;
    let trace = generate_two_receiver_trace(&config.scenario()?, seed)?;
    log::info!("{} packets, {} samples per receiver", trace.truth.len(), trace.rx[0].len());
    for (i, path) in [&a.out_rx1, &a.out_rx2].into_iter().enumerate() {
        write_stream(&trace.rx[i], path, &meta_path_for(path), Some(i as u32 + 1))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    write_jsonl(&a.truth, &trace.truth).with_context(|| format!("writing {}", a.truth.display()))
}

fn load_stream(input: &InputArgs) -> anyhow::Result<IqStream> {
    let meta = input.meta.clone().unwrap_or_else(|| meta_path_for(&input.iq));
    read_stream(&input.iq, &meta).with_context(|| format!("reading {} with {}", input.iq.display(), meta.display()))
}

fn decode_input(input: &InputArgs) -> anyhow::Result<Vec<DecodedPacket>> {
    let stream = load_stream(input)?;
    let (packets, stats) = detect_and_decode_with_stats(&stream, input.receiver_id, &ReceiverConfig::default());
    log::info!("receiver {}: {stats:?}", input.receiver_id);
    Ok(packets)
}

fn read_records(path: &Path) -> anyhow::Result<Vec<ToaRecord>> {
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

fn evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let rx1 = read_records(&a.rx1)?;
    let rx2 = read_records(&a.rx2)?;
    let evals = eval::evaluate(&rx1, &rx2, a.max_order as usize)?;
    for e in &evals {
        log::info!("{} N={}: {} pairs, clock fit order {}, {:?}", e.method, e.n, e.stats.pairs, e.fit.order, e.stats);
    }
    let (ecdf, qq) = eval::plot_csvs(&evals);
    for (name, body) in [("report.csv", eval::report_csv(&evals)), ("ecdf.csv", ecdf), ("qq.csv", qq)] {
        let path = PathBuf::from(format!("{}{name}", a.out_prefix));
        write_atomic(&path, body.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
