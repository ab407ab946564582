use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use crdtsim_bench::{emit_tables, run_experiment, ExperimentSpec, MetricsReport, EXPERIMENTS};
use crdtsim_core::jsoncrdt::{JsonCrdt, JsonValue};
use crdtsim_core::ledger::{BlockLog, WorldState};
use crdtsim_core::txpipeline::{RunSummary, SnapshotPolicy, ValidationMode};
use crdtsim_core::workload::{gen_stream, initial_state, read_stream_csv, write_stream_csv, IotChaincode};
use crdtsim_core::{run_pipeline, SimConfig};

#[derive(Parser)]
#[command(name = "crdtsim", version, about = "Simulate an execute-order-validate ledger with CRDT block merging")]
struct Cli {
    /// Output format for everything printed to stdout.
    #[arg(long, value_enum, global = true, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    JsonLines,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Fabric,
    Crdt,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run one workload through the pipeline and print its summary.
    Run(RunArgs),
    /// Run a named experiment sweep (or one described in a TOML file) and write its tables.
    Bench(BenchArgs),
    /// Rebuild the world state from a block log and print its digest.
    Replay {
        /// Block log written by `run --log`.
        log: PathBuf,
    },
    /// Merge JSON documents into one CRDT and print the result.
    MergeDemo(MergeArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config; flags override its values.
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<ValidationMode>,
    #[arg(long)]
    conflict_pct: Option<f64>,
    #[arg(long)]
    txs: Option<usize>,
    #[arg(long, env = "CRDTSIM_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    snapshot: Option<SnapshotPolicy>,
    /// Replay proposals from a stream CSV instead of generating them.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// Write the generated proposal stream to this CSV.
    #[arg(long)]
    dump_stream: Option<PathBuf>,
    /// Directory for per-transaction, per-block and summary CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Persist committed blocks to this file.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(clap::Args)]
struct BenchArgs {
    /// Built-in name or path to a TOML experiment file.
    #[arg(long, default_value = "block_size")]
    experiment: String,
    /// Multiplier on transactions per point (1.0 = 1000).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long, env = "CRDTSIM_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(clap::Args)]
struct MergeArgs {
    /// JSON documents, merged in the order given.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Ledger key the CRDT is created for.
    #[arg(long, default_value = "Device1")]
    key: String,
    /// Accept numbers and booleans by converting them to text.
    #[arg(long)]
    lenient: bool,
    /// Indent the merged document.
    #[arg(long)]
    pretty: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Run(args) => run(args, cli.format, &mut out),
        Command::Bench(args) => bench(args, cli.format, &mut out),
        Command::Replay { log } => replay(&log, cli.format, &mut out),
        Command::MergeDemo(args) => merge_demo(args, &mut out),
    };
    match result.and_then(|()| out.flush().map_err(Into::into)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("crdtsim: error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(args: &RunArgs) -> Result<SimConfig> {
    let mut config = match &args.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    let (p, w) = (&mut config.pipeline, &mut config.workload);
    if let Some(mode) = args.mode {
        p.mode = mode;
    }
    if let Some(size) = args.block_size {
        p.max_tx_count = size;
    }
    if let Some(policy) = args.snapshot {
        p.snapshot_policy = policy;
    }
    if let Some(pct) = args.conflict_pct {
        w.conflict_pct = pct;
    }
    if let Some(n) = args.txs {
        w.total_txs = n;
    }
    if let Some(seed) = args.seed {
        w.seed = seed;
    }
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn run(args: RunArgs, format: Format, out: &mut impl Write) -> Result<()> {
    let config = load_config(&args)?;
    let proposals = match &args.stream {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            read_stream_csv(file)?
        }
        None => gen_stream(&config.workload)?,
    };
    if let Some(path) = &args.dump_stream {
        write_stream_csv(&proposals, create(path)?)?;
    }
    let log = match &args.log {
        Some(path) => BlockLog::persistent(path)?,
        None => BlockLog::new(),
    };
    let chaincode = IotChaincode {
        crdt_writes: config.workload.crdt_writes,
    };
    let run = run_pipeline(&config.pipeline, &chaincode, &initial_state(&proposals), &proposals, log)?;
    let report = &run.report;

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        report.write_tx_csv(create(&dir.join("transactions.csv"))?)?;
        report.write_blocks_csv(create(&dir.join("blocks.csv"))?)?;
        report.write_summary_csv(create(&dir.join("summary.csv"))?)?;
    }
    print_summary(out, format, config.pipeline.mode, &report.summary(), report.blocks.len(), &report.final_digest)
}

fn print_summary(
    out: &mut impl Write,
    format: Format,
    mode: ValidationMode,
    s: &RunSummary,
    blocks: usize,
    digest: &str,
) -> Result<()> {
    match format {
        Format::Csv => {
            writeln!(
                out,
                "mode,total,success,failure,endorsement_rejections,other,throughput_tps,avg_latency_ms,blocks,state_digest"
            )?;
            writeln!(
                out,
                "{mode},{},{},{},{},{},{:.3},{:.3},{blocks},{digest}",
                s.total, s.success, s.failure, s.endorsement_rejections, s.other, s.throughput_tps, s.avg_latency_ms
            )?;
        }
        Format::JsonLines => {
            let mut value = serde_json::to_value(s)?;
            value["mode"] = serde_json::json!(mode.to_string());
            value["blocks"] = serde_json::json!(blocks);
            value["state_digest"] = serde_json::json!(digest);
            writeln!(out, "{value}")?;
        }
    }
    Ok(())
}

fn bench(args: BenchArgs, format: Format, out: &mut impl Write) -> Result<()> {
    if !(args.scale.is_finite() && args.scale > 0.0) {
        bail!("--scale must be positive, got {}", args.scale);
    }
    let names: Vec<String> = if args.experiment == "all" {
        EXPERIMENTS.iter().map(|s| s.to_string()).collect()
    } else {
        vec![args.experiment.clone()]
    };
    let mut header = true;
    for name in names {
        let mut spec = ExperimentSpec::resolve(&name)?.scaled(args.scale);
        if let Some(seed) = args.seed {
            spec.workload.seed = seed;
        }
        if let Some(r) = args.repetitions {
            spec.repetitions = r;
        }
        spec.modes = match args.mode {
            ModeArg::Fabric => vec![ValidationMode::Fabric],
            ModeArg::Crdt => vec![ValidationMode::Crdt],
            ModeArg::Both => vec![ValidationMode::Fabric, ValidationMode::Crdt],
        };
        let report = run_experiment(&spec)?;
        emit_tables(&report, &args.out)?;
        print_points(out, format, &report, header)?;
        header = false;
    }
    Ok(())
}

fn print_points(out: &mut impl Write, format: Format, report: &MetricsReport, header: bool) -> Result<()> {
    if format == Format::Csv && header {
        writeln!(
            out,
            "experiment,param,value,mode,total,success,failure,throughput_tps,avg_latency_ms,merge_time_ms,error"
        )?;
    }
    for p in &report.points {
        match format {
            Format::Csv => writeln!(
                out,
                "{},{},{},{},{},{},{},{:.3},{:.3},{:.4},{}",
                report.experiment,
                report.param.as_str(),
                p.value,
                p.mode,
                p.total,
                p.success_count,
                p.failure_count,
                p.throughput_tps,
                p.avg_latency_ms,
                p.merge_time_ms,
                p.error.as_deref().unwrap_or("").replace(',', ";"),
            )?,
            Format::JsonLines => {
                let mut value = serde_json::to_value(p)?;
                value["experiment"] = serde_json::json!(report.experiment);
                value["param"] = serde_json::json!(report.param.as_str());
                writeln!(out, "{value}")?;
            }
        }
    }
    Ok(())
}

fn replay(path: &Path, format: Format, out: &mut impl Write) -> Result<()> {
    let blocks = BlockLog::read_file(path).with_context(|| format!("cannot replay {}", path.display()))?;
    let state = WorldState::replay(&blocks)?;
    let valid: usize = blocks.iter().map(|b| b.valid_count()).sum();
    let txs: usize = blocks.iter().map(|b| b.block.transactions.len()).sum();
    match format {
        Format::Csv => {
            writeln!(out, "blocks,transactions,valid,keys,state_digest")?;
            writeln!(out, "{},{txs},{valid},{},{}", blocks.len(), state.len(), state.digest())?;
        }
        Format::JsonLines => writeln!(
            out,
            "{}",
            serde_json::json!({
                "blocks": blocks.len(),
                "transactions": txs,
                "valid": valid,
                "keys": state.len(),
                "state_digest": state.digest(),
            })
        )?,
    }
    Ok(())
}

fn merge_demo(args: MergeArgs, out: &mut impl Write) -> Result<()> {
    let mut docs = Vec::new();
    for path in &args.files {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
        let doc = if args.lenient {
            JsonValue::from_serde_lenient(&raw)
        } else {
            JsonValue::from_serde(&raw)
        }
        .with_context(|| format!("cannot merge {}", path.display()))?;
        docs.push(doc);
    }
    let mut crdt = JsonCrdt::init_empty(&args.key, &docs[0])?;
    for (doc, path) in docs.iter().zip(&args.files) {
        crdt.merge_json(doc).with_context(|| format!("cannot merge {}", path.display()))?;
    }
    let merged = crdt.to_json()?;
    if args.pretty {
        writeln!(out, "{}", serde_json::to_string_pretty(&merged.to_serde())?)?;
    } else {
        writeln!(out, "{}", merged.to_canonical_string())?;
    }
    Ok(())
}
