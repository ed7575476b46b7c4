use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drotopo::experiment::{run_sweep, Emit, MRun};
use drotopo::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "drotopo", version, about = "Distributionally robust compliance topology optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every tolerance listed in a configuration file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.directory`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the dual evaluations.
        #[arg(long)]
        threads: Option<usize>,
        /// Comma-separated artifacts: pgm,raw,csv,vtk.
        #[arg(long, value_delimiter = ',')]
        emit: Option<Vec<String>>,
    },
}

fn exit_code(err: &Error) -> u8 {
    if err.is_configuration() {
        2
    } else {
        3
    }
}

fn report(run: &MRun) {
    eprintln!(
        "m = {}: objective {:.6e}, nominal compliance {:.6e}, lambda {:.3e}, {} iterations",
        run.m,
        run.objective,
        run.nominal_compliance,
        run.lambda,
        run.history.len().saturating_sub(1)
    );
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    threads: Option<usize>,
    emit: Option<Vec<String>>,
) -> Result<(), Error> {
    let mut config = RunConfig::load(&config)?;
    if let Some(list) = emit {
        config.output.emit = list
            .iter()
            .map(|s| s.parse::<Emit>())
            .collect::<Result<_, _>>()?;
        config = config.resolve()?;
    }
    if let Some(dir) = out {
        config.output.directory = dir;
    }
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let dir = config.output.directory.clone();
    run_sweep(&config, &dir, report)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            threads,
            emit,
        } => run(config, out, threads, emit),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
