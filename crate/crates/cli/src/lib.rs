//! Command-line driver for the PPMTF synthesizer: configuration, pipeline
//! commands and run reports.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ppmtf", version, about = "Privacy-preserving location-trace synthesis")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a setting, e.g. `--set gibbs.alpha=0.5` (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory (same as `--set paths.output=DIR`).
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 makes every output bit-reproducible.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write clustered demo data and a matching config.toml.
    GenDemo,
    /// Build the trimmed transition and visit tensors.
    BuildTensors,
    /// Fit the factor matrices by Gibbs sampling.
    Train {
        /// `shared` (MTF) or `independent` (ITF).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Generate synthetic traces.
    Synthesize {
        #[arg(long)]
        replicas: Option<usize>,
        /// `ppmtf` or `sgd`.
        #[arg(long)]
        synthesizer: Option<String>,
        #[arg(long)]
        xi: Option<usize>,
        /// Keep only PD-passing traces.
        #[arg(long)]
        gate: bool,
    },
    /// Run the plausible-deniability test on the synthetic traces.
    PdTest {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Utility metrics against the testing traces.
    Evaluate,
    /// Re-identification and membership inference.
    Attack,
    /// κ and the privacy budgets.
    DpReport,
    /// Memory needed for tensors and factors.
    EstimateMemory {
        #[arg(long)]
        users: u64,
        #[arg(long)]
        locations: u64,
        #[arg(long)]
        slots: u64,
    },
    /// The whole pipeline.
    Run,
}

fn command_overrides(cmd: &Command) -> Vec<String> {
    let mut o = Vec::new();
    match cmd {
        Command::Train { mode: Some(m) } => o.push(format!("gibbs.mode={m:?}")),
        Command::Synthesize {
            replicas,
            synthesizer,
            xi,
            gate,
        } => {
            if let Some(r) = replicas {
                o.push(format!("synthesis.replicas={r}"));
            }
            if let Some(s) = synthesizer {
                o.push(format!("synthesis.synthesizer={s:?}"));
            }
            if let Some(x) = xi {
                o.push(format!("synthesis.xi={x}"));
            }
            if *gate {
                o.push("synthesis.gate=true".into());
            }
        }
        Command::PdTest { k, eta } => {
            if let Some(k) = k {
                o.push(format!("pd.k={k}"));
            }
            if let Some(e) = eta {
                o.push(format!("pd.eta={e:?}"));
            }
        }
        _ => {}
    }
    o
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    let mut overrides = cli.overrides.clone();
    if let Some(o) = &cli.output {
        overrides.push(format!("paths.output={:?}", o.display().to_string()));
    }
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    overrides.extend(command_overrides(&cli.command));
    let cfg = match RunConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let result = match &cli.command {
        Command::GenDemo => commands::gen_demo(&cfg),
        Command::BuildTensors => commands::build(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Synthesize { .. } => commands::synthesize(&cfg),
        Command::PdTest { .. } => commands::pd_test(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Attack => commands::attack(&cfg),
        Command::DpReport => commands::dp_report(&cfg),
        Command::EstimateMemory {
            users,
            locations,
            slots,
        } => commands::memory(&cfg, *users, *locations, *slots),
        Command::Run => commands::run(&cfg),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(ppmtf::Error::Config(msg)) => {
            eprintln!("error: invalid configuration: {msg}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
