mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mzgraph::{Error, RunConfig};

use commands::{Layout, StudyArgs};

#[derive(Parser)]
#[command(name = "mzgraph", version, about = "Coarse-grained graph dynamics: simulate, coarsen, analyze, train, evaluate")]
struct Cli {
    /// TOML run configuration; built-in desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding every artifact of the run.
    #[arg(long, global = true, default_value = "mzgraph-out")]
    out: PathBuf,
    /// Worker threads for trajectory generation, training and evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate fine trajectories and their coarse observables.
    Simulate,
    /// Recompute the coarse map, coarse graphs and coarse trajectories from the fine data.
    Coarsen,
    /// Fit the interaction decay and plan hops and memory length.
    Analyze {
        /// Admittance matrix file instead of the simulated Kuramoto system.
        #[arg(long)]
        admittance: Option<PathBuf>,
        /// Topology of the pool to analyze.
        #[arg(long, default_value_t = 0)]
        topology: usize,
    },
    /// Train a model on the training split.
    Train,
    /// Roll the model out on the test split and report NRMSE.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Roll the model out from a seed window over a topology schedule.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Trajectory CSV with exactly `T` samples.
        #[arg(long)]
        window: PathBuf,
        /// Schedule whose sample 0 is the last window sample.
        #[arg(long)]
        schedule: PathBuf,
        /// Output CSV; defaults to `<out>/predict.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Parametric study over hops, delay length and coupling strength.
    Study {
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
        hops: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 50, 100])]
        delays: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        /// Coupling cases by nominal d_eps; all cases when omitted.
        #[arg(long, value_delimiter = ',')]
        d_eps: Option<Vec<f64>>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => Ok(RunConfig::parse(&mzgraph::io::read_text(p)?)?),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| mzgraph::ConfigError::Invalid(format!("thread pool: {e}")))?;
    }
    let mut cfg = load_config(cli.config.as_ref())?;
    if let Some(s) = cli.seed {
        cfg.simulation.seed = s;
    }
    let seed = cfg.simulation.seed;
    let layout = Layout::new(&cli.out);
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, seed, &layout),
        Command::Coarsen => commands::coarsen(&cfg, &layout),
        Command::Analyze { admittance, topology } => commands::analyze(&cfg, &layout, admittance.as_deref(), topology),
        Command::Train => commands::train_cmd(&cfg, seed, &layout),
        Command::Eval { checkpoint } => commands::eval(&layout, checkpoint.as_deref()),
        Command::Predict { checkpoint, window, schedule, output } => {
            let out = output.unwrap_or_else(|| layout.file("predict.csv"));
            commands::predict(&layout, checkpoint.as_deref(), &window, &schedule, &out)
        }
        Command::Study { hops, delays, seeds, d_eps } => {
            commands::study(&cfg, &StudyArgs { hops, delays, seeds, d_eps }, &layout)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
