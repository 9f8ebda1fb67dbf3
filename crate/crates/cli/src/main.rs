use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tpp_cli::commands::{self, CliError, CliResult};
use tpp_cli::Manifest;
use tpp_core::adversary::TamperKind;
use tpp_core::experiment::BenchMode;
use tpp_core::BackendId;

#[derive(Debug, Parser)]
#[command(name = "tpp", version, about = "Sensor pre-processing with on-chain verifiable evidence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate keys and artifacts and deploy the verification contract.
    /// Creates the manifest from the flags when it does not exist yet.
    Setup {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        backend: Option<BackendId>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pre-process, prove and submit batch files; prints one JSON receipt per batch.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Batch files. Unsigned files are signed with the sensor key.
        batches: Vec<PathBuf>,
        /// Generate this many fresh batches instead of reading files.
        #[arg(long, conflicts_with = "batches")]
        batch_count: Option<usize>,
        /// Seed for generated batch values.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generate constraint-system evidence for independent batches concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Write batch fixtures sized per the manifest.
    Generate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        batch_count: usize,
        /// Defaults to the next sequence number the gateway accepts.
        #[arg(long)]
        first_sequence: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write a `.sig` file per batch.
        #[arg(long)]
        sign: bool,
    },
    /// Run a tampering strategy against a fresh deployment; prints one JSON line per trial.
    Attack {
        #[arg(long)]
        strategy: TamperKind,
        #[arg(long)]
        backend: BackendId,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: u64,
    },
    /// Time recurring operations and emit CSV.
    Bench {
        #[arg(long)]
        backend: BackendId,
        #[arg(long)]
        mode: BenchMode,
        /// Batch sizes (size mode) or batch counts (count mode).
        #[arg(long, value_delimiter = ',', required = true)]
        params: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the chain state as JSON.
    ExportChain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_output(out: Option<&PathBuf>, content: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, content).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(content).context("writing stdout")?,
    }
    Ok(())
}

fn execute(command: Command) -> CliResult<()> {
    let mut stdout = io::stdout().lock();
    match command {
        Command::Setup { manifest, backend, batch_size, seed } => {
            if !manifest.exists() {
                let backend = backend.ok_or_else(|| CliError::Usage("--backend is required to create a manifest".into()))?;
                let m = Manifest::new(backend, batch_size.unwrap_or(1), seed);
                m.validate()?;
                if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                }
                m.save(&manifest)?;
            } else if backend.is_some() || batch_size.is_some() || seed.is_some() {
                return Err(CliError::Usage("the manifest exists; edit it instead of passing workflow flags".into()));
            }
            let m = commands::cmd_setup(&manifest)?;
            writeln!(stdout, "{}", serde_json::to_string(&m).expect("manifest serializes")).context("writing stdout")?;
        }
        Command::Run { manifest, batches, batch_count, seed, parallel } => {
            let batches = match batch_count {
                Some(n) => {
                    let first = commands::next_sequence(&manifest)?;
                    let loc = tpp_cli::manifest::Located::load(&manifest)?;
                    commands::cmd_generate(&manifest, &loc.artifact("batches"), n, first, seed, false)?
                }
                None if batches.is_empty() => {
                    return Err(CliError::Usage("pass batch files or --batch-count".into()));
                }
                None => batches,
            };
            commands::cmd_run(&manifest, &batches, parallel, &mut stdout)?;
        }
        Command::Generate { manifest, out, batch_count, first_sequence, seed, sign } => {
            let first = match first_sequence {
                Some(f) => f,
                None => commands::next_sequence(&manifest)?,
            };
            for p in commands::cmd_generate(&manifest, &out, batch_count, first, seed, sign)? {
                writeln!(stdout, "{}", p.display()).context("writing stdout")?;
            }
        }
        Command::Attack { strategy, backend, seed, trials } => {
            commands::cmd_attack(strategy, backend, seed, trials, &mut stdout)?;
        }
        Command::Bench { backend, mode, params, repetitions, seed, out } => {
            let mut buf = Vec::new();
            commands::cmd_bench(backend, mode, &params, repetitions, seed, &mut buf)?;
            write_output(out.as_ref(), &buf)?;
        }
        Command::ExportChain { manifest, out } => {
            let json = commands::cmd_export_chain(&manifest)?;
            write_output(out.as_ref(), json.as_bytes())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
