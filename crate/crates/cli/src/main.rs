use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use midt_cli::{exit, run, Command, Source};

/// Spectrally informed diffusion for multi-lead ECG-like signals.
///
/// Exit codes: 0 success, 1 runtime failure, 2 bad configuration or missing
/// input file, 3 non-finite training.
/// MIDT_THREADS caps the worker threads.
#[derive(Parser)]
#[command(name = "midt", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Parent directory for run directories (overrides `paths.out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the top-level `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RecordArgs {
    #[command(flatten)]
    common: Common,
    /// Index into the dataset.
    #[arg(long, default_value_t = 0)]
    record: usize,
    #[arg(long, value_enum, default_value_t = SourceArg::Real)]
    source: SourceArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Real,
    Synth,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the oracle dataset.
    GenData(Common),
    /// Train the diffusion model on the training folds.
    Train(Common),
    /// Sample one record per test-fold template.
    Sample(Common),
    /// Fidelity and correlation reports (samples first if needed).
    Eval(Common),
    /// Membership inference and adversarial accuracy.
    Privacy(Common),
    /// Fold-mix tables and faithfulness.
    Downstream(Common),
    /// Aggregate the stage summaries into report.toml.
    Report(Common),
    /// Spectrogram utilities.
    Spectro {
        #[command(subcommand)]
        action: SpectroCmd,
    },
    /// Write one record as CSV.
    ExportRecord(RecordArgs),
}

#[derive(Subcommand)]
enum SpectroCmd {
    /// Write the log-mel spectrogram of a record, per window and lead, as CSV.
    Dump(RecordArgs),
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("MIDT_THREADS") else {
        return Ok(());
    };
    let n: usize =
        v.parse().ok().filter(|&n| n > 0).ok_or(format!("MIDT_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit::BAD_INPUT as u8);
    }
    let source = |s: SourceArg| match s {
        SourceArg::Real => Source::Real,
        SourceArg::Synth => Source::Synth,
    };
    let (cmd, common) = match cli.command {
        Cmd::GenData(c) => (Command::GenData, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Sample(c) => (Command::Sample, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Privacy(c) => (Command::Privacy, c),
        Cmd::Downstream(c) => (Command::Downstream, c),
        Cmd::Report(c) => (Command::Report, c),
        Cmd::Spectro { action: SpectroCmd::Dump(a) } => {
            (Command::SpectroDump { record: a.record, source: source(a.source) }, a.common)
        }
        Cmd::ExportRecord(a) => (Command::ExportRecord { record: a.record, source: source(a.source) }, a.common),
    };
    match run(&cmd, &common.config, common.out, common.seed) {
        Ok((r, written)) => {
            println!("run directory: {}", r.dir.display());
            for p in written {
                println!("wrote {}", p.display());
            }
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
