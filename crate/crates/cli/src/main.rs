//! `ecoweave`: run, validate and replay communication-layer scenarios.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecoweave_core::sim::{bundled, Scenario, Simulator, Trace, TraceKind};
use ecoweave_core::transport::memory::{BASE_BYTES, MSG_BYTES, SYN_CHANNEL_BYTES};
use ecoweave_core::{comm_memory, NetworkConfig};

const DEFAULT_DURATION_MS: u64 = 10_000;

#[derive(Debug, Parser)]
#[command(name = "ecoweave", version, about = "Simulated robotic-ecology communication layer")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file and write its trace and per-node summary.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Check a scenario file. Prints nothing when it is well formed.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Print the RAM footprint of a mote configuration.
    Memory {
        #[arg(default_value_t = 4)]
        in_radio: usize,
        #[arg(default_value_t = 4)]
        out_radio: usize,
        #[arg(default_value_t = 2)]
        in_serial: usize,
        #[arg(default_value_t = 2)]
        out_serial: usize,
        /// Number of synaptic channels.
        #[arg(long, default_value_t = 0)]
        channels: usize,
    },
    /// Replay the bundled in-hospital transport test-bed.
    ReplayHospital {
        #[command(flatten)]
        run: RunOpts,
    },
    /// Replay the bundled assisted-living test-bed with its proxy.
    ReplayAal {
        #[command(flatten)]
        run: RunOpts,
    },
}

#[derive(Debug, Args)]
struct RunOpts {
    /// Seed for the link model. Falls back to the scenario's own seed, then 0.
    #[arg(long, env = "ECOWEAVE_SEED")]
    seed: Option<u64>,
    /// Simulated time to run, in milliseconds (end exclusive).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    duration: Option<u64>,
    /// Directory for `trace.<format>` and `summary.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Ndjson,
}

#[derive(Debug)]
enum Failure {
    Io(String),
    Invalid(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let mut stdout = io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command, out: &mut impl Write) -> Result<(), Failure> {
    match cmd {
        Command::Run { scenario, run } => {
            let sc = load(&scenario)?;
            let (_, summary) = simulate(&sc, &run)?;
            out.write_all(&summary)?;
        }
        Command::Validate { scenario } => {
            load(&scenario)?;
        }
        Command::Memory { in_radio, out_radio, in_serial, out_serial, channels } => {
            let cfg =
                NetworkConfig { in_radio_cap: in_radio, out_radio_cap: out_radio, in_serial_cap: in_serial, out_serial_cap: out_serial };
            let r = comm_memory(&cfg, channels);
            writeln!(out, "base: {} bytes", BASE_BYTES)?;
            writeln!(out, "buffers: {} bytes ({} slots x {})", r.buffers, r.buffer_slots, MSG_BYTES)?;
            writeln!(out, "channels: {} bytes ({} x {})", r.channel_bytes, r.channels, SYN_CHANNEL_BYTES)?;
            writeln!(out, "total: {} bytes", r.total)?;
        }
        Command::ReplayHospital { run } => {
            let sc = parse_bundled(bundled::HOSPITAL)?;
            let (trace, _) = simulate(&sc, &run)?;
            let created: Vec<&str> =
                trace.of_kind(TraceKind::Info).filter_map(|e| e.note.as_deref()?.strip_prefix("out channel created transducer=")).collect();
            writeln!(out, "configuration = {{{}}}", created.join(", "))?;
            writeln!(out, "channels created: {}", created.len())?;
            writeln!(out, "SYN_EMIT: {}", trace.count(TraceKind::SynEmit))?;
            writeln!(out, "SYN_SIGNAL: {}", trace.count(TraceKind::SynSignal))?;
        }
        Command::ReplayAal { run } => {
            let sc = parse_bundled(bundled::AAL)?;
            let proxy = ecoweave_core::whiteboard::Proxy::with_standard_converters();
            let (trace, _) = simulate(&sc, &run)?;
            for code in proxy.codes() {
                let name = proxy.converter(code).map_or("?", |c| c.name());
                writeln!(out, "converter {code}: {name}")?;
            }
            writeln!(out, "JOINED: {}", trace.count(TraceKind::Joined))?;
            writeln!(out, "TUPLE_WRITE: {}", trace.count(TraceKind::TupleWrite))?;
            let mut keys: Vec<&str> = trace.of_kind(TraceKind::TupleWrite).filter_map(|e| e.key.as_deref()).collect();
            keys.sort_unstable();
            keys.dedup();
            for k in keys {
                writeln!(out, "tuple {k}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Scenario::parse(&text)
        .map_err(|e| Failure::Invalid(e.0.iter().map(|d| format!("{}:{d}", path.display())).collect::<Vec<_>>().join("\n")))
}

fn parse_bundled(text: &str) -> Result<Scenario, Failure> {
    Scenario::parse(text).map_err(|e| Failure::Invalid(e.to_string()))
}

/// Run to completion in memory, then write the requested files. Nothing
/// touches the output directory unless the whole run succeeded.
fn simulate(sc: &Scenario, opts: &RunOpts) -> Result<(Trace, Vec<u8>), Failure> {
    let seed = opts.seed.or(sc.seed).unwrap_or(0);
    let until = opts.duration.or(sc.duration_ms).unwrap_or(DEFAULT_DURATION_MS);
    log::info!("running {:?} with seed {seed} for {until} ms", sc.name);
    let mut sim = Simulator::new(sc, seed);
    sim.run_until(until);
    let mut summary = Vec::new();
    sim.write_summary_csv(&mut summary)?;
    let trace = sim.into_trace();
    log::info!("{} trace events", trace.len());
    if let Some(dir) = &opts.out {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        let (name, bytes) = match opts.format {
            Format::Csv => ("trace.csv", trace.to_csv()),
            Format::Ndjson => ("trace.ndjson", trace.to_ndjson()),
        };
        write_file(&dir.join(name), &bytes)?;
        write_file(&dir.join("summary.csv"), &summary)?;
    }
    Ok((trace, summary))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}
