use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mbnoma::harness::oracle::{run_gate, Gate, OracleSettings};
use mbnoma::harness::{load_config, run_experiment, ConfigFile, Experiment, Preset, Scheme};

#[derive(Parser)]
#[command(name = "mbnoma", version, about = "Multi-beam NOMA simulator for hybrid mmWave downlinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment preset and write its CSV files.
    Run {
        /// convergence, sumrate_vs_power, sumrate_vs_antennas or sumrate_vs_density
        preset: Preset,
        /// TOML file with [drop], [grouping], [precoding], [power] and [experiment] tables
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed (overrides the config file)
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Drops per sweep point (overrides the config file)
        #[arg(long)]
        drops: Option<usize>,
        /// Comma-separated schemes: proposed, exhaustive, single_beam, oma
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<Scheme>>,
        /// Also write per-drop SCA traces
        #[arg(long)]
        trace: bool,
    },
    /// Run an acceptance gate, or `all` of them.
    Oracle {
        gate: String,
        #[arg(long, default_value_t = OracleSettings::default().seed)]
        seed: u64,
        /// Drops per sweep point for the trend gate
        #[arg(long, default_value_t = OracleSettings::default().trend_drops)]
        trend_drops: usize,
    },
}

fn run(
    preset: Preset,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    drops: Option<usize>,
    schemes: Option<Vec<Scheme>>,
    trace: bool,
) -> Result<()> {
    let file = match &config {
        Some(path) => load_config(path).with_context(|| format!("reading {}", path.display()))?,
        None => ConfigFile::default(),
    };
    let mut exp = Experiment::with_config(preset, &file);
    exp.seed = seed.unwrap_or(exp.seed);
    exp.drops = drops.unwrap_or(exp.drops);
    exp.schemes = schemes.unwrap_or(exp.schemes);
    exp.trace |= trace;
    exp.validate()?;
    let start = Instant::now();
    let output = run_experiment(&exp)?;
    for path in output.write(&out)? {
        println!("wrote {}", path.display());
    }
    eprintln!("{} drops x {} points in {:.1?}", exp.drops, exp.grid.len(), start.elapsed());
    print!("{}", output.results_csv());
    Ok(())
}

fn oracle(gate: &str, settings: &OracleSettings) -> Result<bool> {
    let gates = if gate == "all" { Gate::ALL.to_vec() } else { vec![gate.parse::<Gate>()?] };
    let mut ok = true;
    for g in gates {
        let report = run_gate(g, settings)?;
        println!("{report}");
        ok &= report.passed;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { preset, config, seed, out, drops, schemes, trace } => {
            run(preset, config, seed, out, drops, schemes, trace).map(|()| true)
        }
        Command::Oracle { gate, seed, trend_drops } => oracle(&gate, &OracleSettings { seed, trend_drops }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
