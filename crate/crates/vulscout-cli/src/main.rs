use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vulscout_cli::{
    cmd_context_extract, cmd_detect, cmd_evaluate, parse_dispatcher, parse_stage_mode,
    BackendChoice, ContextExtractArgs, DetectArgs, EvaluateArgs, EXIT_FATAL,
};

/// Multi-view, hypothesis-validated vulnerability detection.
#[derive(Parser)]
#[command(name = "vulscout", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect vulnerabilities in a dataset or a single source file.
    Detect(DetectCli),
    /// Score a detection run against a pair dataset.
    Evaluate(EvaluateCli),
    /// Extract a lightweight context bundle from a source directory.
    ContextExtract(ContextExtractCli),
}

#[derive(Args)]
struct DetectCli {
    /// Dataset (.jsonl), sample document (.json), or raw source file.
    input: PathBuf,
    /// Model backend: live, replay, or mock.
    #[arg(long, default_value = "mock")]
    backend: String,
    /// Worker pool width (default 8, or pipeline.workers from --config).
    #[arg(long)]
    workers: Option<usize>,
    /// Context bundle file.
    #[arg(long)]
    context: Option<PathBuf>,
    /// Scripted responses for the mock backend.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Dispatcher mode: lexical or llm.
    #[arg(long)]
    dispatcher: Option<String>,
    /// Planner/pruner/verifier mode: llm or graph.
    #[arg(long, default_value = "llm")]
    mode: String,
    /// Output directory (reports/, manifest.run, cache/).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Cache directory override (defaults to <out>/cache).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Model id used for cache keying with the replay backend.
    #[arg(long, default_value = "mock")]
    model: String,
    /// Run configuration file (dispatcher.mode, pipeline.workers,
    /// agents.enabled).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Allow-list of specialized agents (comma-separated ids).
    #[arg(long, value_delimiter = ',')]
    agents: Option<Vec<String>>,
}

#[derive(Args)]
struct EvaluateCli {
    /// Directory of <sample>.report files.
    #[arg(long)]
    reports: PathBuf,
    /// Pair dataset (.jsonl).
    #[arg(long)]
    dataset: PathBuf,
    /// Treat samples without a report as predicted benign.
    #[arg(long)]
    assume_benign: bool,
    /// Directory for metrics.json and metrics.md.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ContextExtractCli {
    /// Source directory to scan.
    source_dir: PathBuf,
    /// Output bundle file.
    #[arg(long)]
    out: PathBuf,
    /// Project name recorded in the bundle (defaults to the directory name).
    #[arg(long)]
    target: Option<String>,
}

fn run() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    match cli.command {
        Command::Detect(args) => {
            let backend = BackendChoice::parse(&args.backend)
                .ok_or_else(|| anyhow::anyhow!("unknown backend {:?}", args.backend))?;
            let dispatcher = args.dispatcher.as_deref().map(parse_dispatcher).transpose()?;
            let stage_mode = parse_stage_mode(&args.mode)?;
            cmd_detect(&DetectArgs {
                input: args.input,
                backend,
                workers: args.workers,
                context: args.context,
                mock_script: args.mock_script,
                dispatcher,
                stage_mode,
                out: args.out,
                cache: args.cache,
                model: args.model,
                config_file: args.config,
                agents_enabled: args.agents,
            })
        }
        Command::Evaluate(args) => {
            let markdown = cmd_evaluate(&EvaluateArgs {
                reports: args.reports,
                dataset: args.dataset,
                assume_benign: args.assume_benign,
                out: args.out,
            })?;
            print!("{markdown}");
            Ok(0)
        }
        Command::ContextExtract(args) => {
            cmd_context_extract(&ContextExtractArgs {
                source_dir: args.source_dir,
                out: args.out,
                target: args.target,
            })?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("vulscout: {e:#}");
            ExitCode::from(EXIT_FATAL as u8)
        }
    }
}
