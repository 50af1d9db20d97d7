use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use backoff_tail::tailstats::DEFAULT_TAIL_FRACTION;
use backoff_tail::RetryLimit;
use backoff_tail_cli::commands::{self, Dumps, Output};
use backoff_tail_cli::{emit, load_config, presets, CliError, Format, Scenario};
use clap::{Parser, Subcommand};

/// Backoff schedules in saturated random access networks: fixed-point
/// model, slot simulator and delay tail statistics.
#[derive(Debug, Parser)]
#[command(name = "backtail", version)]
struct Cli {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset, used when no --config is given.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Do not echo the resolved scenario to stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the fixed point for one network size.
    Solve {
        #[arg(long)]
        n: Option<u64>,
        /// Integer or `inf`.
        #[arg(long)]
        retry_limit: Option<RetryLimit>,
    },
    /// Solve over a range of network sizes.
    Sweep {
        /// start:stop:step
        #[arg(long)]
        n_range: String,
        #[arg(long)]
        retry_limit: Option<RetryLimit>,
    },
    /// Run the slot simulator.
    Simulate {
        #[arg(long)]
        slots: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        n: Option<u64>,
        /// One delay in µs per line (first run).
        #[arg(long)]
        dump_delays: Option<PathBuf>,
        /// CSV stage,attempts,collisions,pc (first run).
        #[arg(long)]
        dump_stages: Option<PathBuf>,
        /// CSV node,successes (first run).
        #[arg(long)]
        dump_nodes: Option<PathBuf>,
    },
    /// Tail class and moment finiteness at a collision probability.
    Classify {
        #[arg(long)]
        pc: f64,
        #[arg(long, default_value_t = 4)]
        max_order: u32,
    },
    /// PMF of the total countdown with its light-tail fit.
    Pmf {
        #[arg(long)]
        pc: f64,
        #[arg(long, default_value_t = 2048)]
        n_max: usize,
    },
    /// Tail statistics of a delay sample file.
    Tail {
        #[arg(long)]
        delays: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAIL_FRACTION)]
        tail_fraction: f64,
        #[arg(long)]
        hill_k: Option<usize>,
    },
    /// Named scenarios.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Print the resolved scenario as a complete config file.
    Emit,
}

#[derive(Debug, Subcommand)]
enum PresetAction {
    List,
    /// Solve and simulate a preset.
    Run { name: String },
}

impl Cli {
    fn scenario(&self) -> Result<Scenario, CliError> {
        let mut scn = match (&self.config, &self.preset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(name)) => presets::get(name)?,
            (None, None) => {
                return Err(CliError::Config(
                    "<root>: no scenario (give --config <file> or --preset <name>)".into(),
                ))
            }
        };
        if let Some(seed) = self.seed {
            scn.seed = seed;
        }
        if !self.quiet {
            eprintln!("{}", emit(&scn));
        }
        Ok(scn)
    }
}

fn execute(cli: &Cli) -> Result<Output, CliError> {
    match &cli.command {
        Command::Solve { n, retry_limit } => commands::solve_cmd(&cli.scenario()?, *n, *retry_limit, cli.format),
        Command::Sweep { n_range, retry_limit } => {
            let ns = commands::parse_range(n_range)?;
            commands::sweep_cmd(&cli.scenario()?, &ns, *retry_limit, cli.format)
        }
        Command::Simulate { slots, runs, n, dump_delays, dump_stages, dump_nodes } => {
            let mut file = cli.scenario()?.to_file();
            file.slots = slots.or(file.slots);
            file.runs = runs.or(file.runs);
            file.n = n.or(file.n);
            let scn = file.resolve()?;
            let dumps = Dumps {
                delays: dump_delays.as_deref(),
                stages: dump_stages.as_deref(),
                nodes: dump_nodes.as_deref(),
            };
            commands::simulate_cmd(&scn, &dumps, cli.format)
        }
        Command::Classify { pc, max_order } => commands::classify_cmd(&cli.scenario()?, *pc, *max_order),
        Command::Pmf { pc, n_max } => commands::pmf_cmd(&cli.scenario()?, *pc, *n_max, cli.format),
        Command::Tail { delays, tail_fraction, hill_k } => {
            let samples = commands::read_samples(delays)?;
            commands::tail_cmd(&samples, *tail_fraction, *hill_k)
        }
        Command::Preset { action: PresetAction::List } => Ok(commands::preset_list(cli.format)),
        Command::Preset { action: PresetAction::Run { name } } => {
            let mut scn = presets::get(name)?;
            if let Some(seed) = cli.seed {
                scn.seed = seed;
            }
            commands::preset_run(&scn)
        }
        Command::Emit => {
            let scn = cli.scenario()?;
            Ok(Output { text: format!("{}\n", emit(&scn)), converged: true })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match execute(&cli) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("backtail: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let written = match &cli.output {
        Some(path) => fs::write(path, &out.text).map_err(|e| CliError::io(path.display().to_string(), e)),
        None => std::io::stdout()
            .write_all(out.text.as_bytes())
            .map_err(|e| CliError::io("<stdout>", e)),
    };
    if let Err(e) = written {
        eprintln!("backtail: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    if out.converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("backtail: {}", CliError::NonConvergence("fixed point residual above tolerance".into()));
        ExitCode::from(3)
    }
}
