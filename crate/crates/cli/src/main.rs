use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ethplan_cli::commands::parse_grid_axis;
use ethplan_cli::config::{load_config, Overrides};
use ethplan_cli::{cmd_gen_suite, cmd_gradcheck, cmd_run, cmd_sweep, cmd_train, CliError, GradcheckOptions, RunConfig};
use ethplan_core::par::Parallelism;
use toml::{Table, Value};

#[derive(Parser)]
#[command(name = "ethplan", version, about = "Risk-aware trajectory planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the scenario suite and write comparison, results and traces.
    Run(Common),
    /// Train the attention-LSTM forecaster.
    Train(Common),
    /// Compare analytic and numeric forecaster gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Finite-difference step.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, hide = true)]
        mutate_attention: bool,
    },
    /// Evaluate the suite over a grid of configuration values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid axis `KEY=V1,V2,...` (repeatable).
        #[arg(long = "grid", value_name = "KEY=VALUES")]
        grid: Vec<String>,
    },
    /// Write the bundled synthetic suite and toy training set.
    GenSuite {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        count: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `planner.omega_u=0` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self, grid: Vec<(String, Vec<Value>)>) -> Result<(RunConfig, Table), CliError> {
        let overrides = Overrides { set: self.set.clone(), seed: self.seed, out: self.out.clone(), grid };
        load_config(&self.config, &overrides)
    }

    fn mode(&self) -> Result<Parallelism, CliError> {
        match self.jobs {
            Some(0) => Err(CliError::Config("`--jobs` must be >= 1".into())),
            Some(1) => Ok(Parallelism::Sequential),
            Some(n) => {
                #[cfg(feature = "parallel")]
                rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
                let _ = n;
                Ok(Parallelism::Parallel)
            }
            None => Ok(Parallelism::Parallel),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(c) => {
            let (config, _) = c.load(Vec::new())?;
            let metrics = cmd_run(&config, c.mode()?)?;
            for m in metrics {
                println!("{}: completed {}%, total harm {}", m.variant, m.completed_rate, m.total_harm);
            }
        }
        Command::Train(c) => {
            let (config, _) = c.load(Vec::new())?;
            let losses = cmd_train(&config, c.mode()?)?;
            if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                println!("loss {first} -> {last} over {} steps", losses.len());
            }
        }
        Command::Gradcheck { common, eps, mutate_attention } => {
            let (config, _) = common.load(Vec::new())?;
            cmd_gradcheck(&config, GradcheckOptions { eps, mutate_attention }, common.mode()?)?;
        }
        Command::Sweep { common, grid } => {
            let axes = grid.iter().map(|g| parse_grid_axis(g)).collect::<Result<Vec<_>, _>>()?;
            let (config, table) = common.load(axes)?;
            let rows = cmd_sweep(&config, &table, common.mode()?)?;
            println!("{} grid points written to {}", rows.len(), config.out.join("sweep.csv").display());
        }
        Command::GenSuite { out, seed, count } => cmd_gen_suite(&out, seed, count)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
