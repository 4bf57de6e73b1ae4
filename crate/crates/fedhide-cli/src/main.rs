use std::path::PathBuf;

use clap::{Parser, Subcommand};

use fedhide_cli::config::ExperimentConfig;
use fedhide_cli::{grid, report, runner, CliError};

#[derive(Parser)]
#[command(
    name = "fedhide",
    about = "Prototype-based federated learning simulator with proxy class prototypes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one experiment per grid point and emit a combined table.
    Sweep {
        config: PathBuf,
        /// Grid spec, e.g. "fedgn sigma=0.1,0.5; fedaws".
        #[arg(long)]
        grid: String,
        /// Worker threads for grid points.
        #[arg(long, default_value_t = 4)]
        threads: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render tables from a directory of finished runs.
    Report { dir: PathBuf },
}

#[derive(clap::Args)]
struct Overrides {
    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of training rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seeds = vec![seed];
        }
        if let Some(rounds) = self.rounds {
            config.train.rounds = rounds;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let mut config = ExperimentConfig::load(&config)?;
            overrides.apply(&mut config);
            let summary = runner::run_experiment(&config)?;
            print!(
                "{}",
                std::fs::read_to_string(config.output_dir().join("summary.txt"))
                    .unwrap_or_else(|_| format!("finished {}\n", summary.label))
            );
            Ok(())
        }
        Command::Sweep {
            config,
            grid: grid_spec,
            threads,
            overrides,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            overrides.apply(&mut config);
            let points = grid::parse_grid(&grid_spec)?;
            let rows = runner::run_sweep(&config, &points, threads)?;
            print!("{}", runner::render_sweep(&rows));
            Ok(())
        }
        Command::Report { dir } => {
            let rendered = report::report(&dir)?;
            print!("{}", rendered.text);
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
