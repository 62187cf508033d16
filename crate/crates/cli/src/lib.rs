//! Config-driven runner: reads a TOML experiment (or a manifest from an
//! earlier run), executes the requested analyses in dependency order and
//! writes CSV/JSON artifacts with a manifest and a summary.

pub mod config;
pub mod output;
pub mod runner;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{Format, Operation};

#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config error: {m}"),
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
            RunError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<asip_core::Error> for RunError {
    fn from(e: asip_core::Error) -> Self {
        if e.is_numerical() {
            RunError::Numerical(e.to_string())
        } else {
            RunError::Config(e.to_string())
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 1,
            RunError::Numerical(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "asip", version, about = "Birkhoff-sum experiments for interval maps")]
pub struct Cli {
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Table format; overrides `output.format`.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs `analysis.operations` from a config or a manifest.
    Run {
        config: PathBuf,
    },
    MapValidate {
        config: PathBuf,
    },
    Density {
        config: PathBuf,
    },
    Correlations {
        config: PathBuf,
    },
    Variance {
        config: PathBuf,
    },
    Clt {
        config: PathBuf,
    },
    Wip {
        config: PathBuf,
    },
    Lil {
        config: PathBuf,
    },
    Mixing {
        config: PathBuf,
    },
    Gordin {
        config: PathBuf,
    },
    Decompose {
        config: PathBuf,
    },
    Martingale {
        config: PathBuf,
    },
    Ddm {
        config: PathBuf,
    },
    NormalizationScan {
        config: PathBuf,
    },
    CouplingDemo {
        config: PathBuf,
    },
    /// Every operation.
    FullReport {
        config: PathBuf,
    },
}

impl Command {
    fn split(&self) -> (&Path, Option<Vec<Operation>>) {
        use Command::*;
        let one = |o| Some(vec![o]);
        match self {
            Run { config } => (config, None),
            MapValidate { config } => (config, one(Operation::MapValidate)),
            Density { config } => (config, one(Operation::Density)),
            Correlations { config } => (config, one(Operation::Correlations)),
            Variance { config } => (config, one(Operation::Variance)),
            Clt { config } => (config, one(Operation::Clt)),
            Wip { config } => (config, one(Operation::Wip)),
            Lil { config } => (config, one(Operation::Lil)),
            Mixing { config } => (config, one(Operation::Mixing)),
            Gordin { config } => (config, one(Operation::Gordin)),
            Decompose { config } => (config, one(Operation::Decompose)),
            Martingale { config } => (config, one(Operation::Martingale)),
            Ddm { config } => (config, one(Operation::Ddm)),
            NormalizationScan { config } => (config, one(Operation::NormalizationScan)),
            CouplingDemo { config } => (config, one(Operation::CouplingDemo)),
            FullReport { config } => (config, Some(Operation::ALL.to_vec())),
        }
    }
}

/// Parses, validates, runs and writes; returns the summary lines.
pub fn run(cli: &Cli) -> Result<Vec<String>, RunError> {
    let (path, ops) = cli.command.split();
    let mut cfg = config::load(path)?;
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(f) = cli.format {
        cfg.output.format = f;
    }
    let ops = match ops {
        Some(o) => o,
        None if cfg.analysis.operations.is_empty() => {
            return Err(RunError::Config("config::resolve: analysis.operations is empty".into()))
        }
        None => cfg.analysis.operations.clone(),
    };
    let dir =
        cli.out.clone().or_else(|| cfg.output.dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    cfg.resolve(&config::expand(&ops))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| RunError::Config(format!("runner: thread pool: {e}")))?;
    let format = cfg.output.format;
    let done = pool.install(|| runner::execute(&cfg, &ops, format))?;
    done.artifacts.write_all(&dir)?;
    Ok(done.artifacts.summary)
}

/// Entry point shared by the binary and tests; returns the exit code.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("asip: {e}");
            e.exit_code()
        }
    }
}
