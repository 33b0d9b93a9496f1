//! `leadlag`: ingest klines, build lead-lag features, train and evaluate
//! forecasting models, sweep the kernel size and emit reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "leadlag", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "leadlag.toml")]
    config: PathBuf,
    /// Run only this seed instead of experiment.seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the planned cells and exit without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Output directory, overriding output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Parse and align klines, write the normalized frame.
    Ingest,
    /// Write one feature file per configured method.
    Featurize,
    /// Run the experiment matrix and write the report.
    Run,
    /// Sweep the kernel size n.
    Sweep,
    /// Rebuild the report from completed cells.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Featurize => "featurize",
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(leadlag::Error),
}

impl From<leadlag::Error> for CliError {
    fn from(e: leadlag::Error) -> Self {
        CliError::Core(e)
    }
}

macro_rules! core_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}
core_from!(leadlag::ingest::IngestError, leadlag::c2rm::C2rmError);

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut raw = RunConfig::load(&cli.config).map_err(|e| CliError::Config(e.0))?;
    if let Some(seed) = cli.seed {
        raw.experiment.seeds = vec![seed];
    }
    let base = cli.config.parent().map(PathBuf::from).unwrap_or_default();
    let mut cfg = raw.resolve(&base).map_err(|e| CliError::Config(e.0))?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let seeds = cfg.raw.experiment.seeds.clone();
    if cli.dry_run && !matches!(cli.command, Command::Run) {
        println!("event=plan command={} out={} dry_run=true", cli.command.name(), cfg.out_dir.display());
        return Ok(());
    }
    match cli.command {
        Command::Ingest => commands::ingest(&cfg).map(|_| ()),
        Command::Featurize => commands::featurize_cmd(&cfg),
        Command::Run => commands::run(&cfg, &seeds, cli.dry_run),
        Command::Sweep => commands::sweep(&cfg, &seeds),
        Command::Report => commands::report(&cfg, &seeds),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            println!("event=error code={} message={:?}", e.exit_code(), e.to_string());
            ExitCode::from(e.exit_code())
        }
    }
}
