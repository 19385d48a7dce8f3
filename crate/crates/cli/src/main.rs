use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use im_cli::commands::{self, Source};
use im_cli::{exit_code, EXIT_CONFIG};

/// Inspection and maintenance planning with POMDPs and heuristic baselines.
#[derive(Parser)]
#[command(name = "im-pomdp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// Experiment or scheme preset, e.g. R_RI50-R_FR20 or DR_d30.
    preset: Option<String>,
    /// TOML experiment file (instead of a preset).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory (default runs/<name>/<command>).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl From<SourceArgs> for Source {
    fn from(a: SourceArgs) -> Self {
        Source {
            preset: a.preset,
            config: a.config,
            seed: a.seed,
            out: a.out,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compile schemes and report their accuracy against Monte Carlo.
    Discretize {
        #[command(flatten)]
        source: SourceArgs,
        /// Schemes to compare (default: the preset's).
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
        /// Monte Carlo reference pool size.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Assemble the POMDP and save it.
    Build {
        #[command(flatten)]
        source: SourceArgs,
        /// Stationary model instead of the time-augmented one.
        #[arg(long)]
        infinite: bool,
    },
    /// Solve with the point-based solver and write the anytime trace.
    Solve {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        infinite: bool,
        /// Time budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
        /// Stop after this many backups (reproducible runs).
        #[arg(long)]
        max_backups: Option<usize>,
    },
    /// Grid-search the configured heuristic families.
    Heuristics {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Simulate a solved policy.
    Evaluate {
        #[command(flatten)]
        source: SourceArgs,
        /// policy.bin written by `solve`.
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        infinite: bool,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Write the assembled model in the POMDP interchange text format.
    Export {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long)]
        infinite: bool,
        /// Output file (default <run dir>/model.pomdp).
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Parse and validate an interchange file.
    Import { file: PathBuf },
    /// Full comparison table for one experiment.
    Reproduce {
        #[command(flatten)]
        source: SourceArgs,
        /// Solver time budget per model, seconds.
        #[arg(long)]
        budget: Option<f64>,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("IM_POMDP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("IM_POMDP_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    let progress = |m: &str| eprintln!("{m}");
    let result = match cli.command {
        Command::Discretize { source, schemes, samples } => commands::discretize(&source.into(), &schemes, samples),
        Command::Build { source, infinite } => commands::build(&source.into(), infinite),
        Command::Solve {
            source,
            infinite,
            budget,
            max_backups,
        } => commands::solve(&source.into(), infinite, budget, max_backups),
        Command::Heuristics { source } => commands::heuristics(&source.into()),
        Command::Evaluate {
            source,
            policy,
            infinite,
            episodes,
        } => commands::evaluate(&source.into(), &policy, infinite, episodes),
        Command::Export { source, infinite, file } => commands::export(&source.into(), infinite, file.as_deref()),
        Command::Import { file } => commands::import(&file),
        Command::Reproduce { source, budget } => commands::reproduce(&source.into(), budget, progress),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(im_core::Error::StateBudget { .. }) = e.downcast_ref::<im_core::Error>() {
                eprintln!("hint: raise assemble.state_budget in the config or choose a coarser scheme");
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
