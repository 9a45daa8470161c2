use std::path::PathBuf;
use std::process::ExitCode;

use aggr::commands::{cmd_compare, cmd_converge, cmd_particles, cmd_simulate};
use aggr::config::{preset, Overrides, SimConfig};
use aggr::HarnessError;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "aggr", version, about = "Aggregation equation with pointy potentials: scheme and particle experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Start from a built-in preset instead of a file
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=3))]
    example: Option<u8>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    cells: Option<usize>,
    #[arg(long, global = true, value_name = "G")]
    gamma: Option<f64>,
    #[arg(long = "t-end", global = true, value_name = "T")]
    t_end: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the finite-volume scheme
    Simulate,
    /// Run sticky particles from atomic initial data
    Particles,
    /// Wasserstein-1 distance between scheme and particles over time
    Compare {
        /// Number of particles in the comparison run
        #[arg(long)]
        particles: Option<usize>,
    },
    /// Grid refinement study against a particle oracle
    Converge {
        /// Nested cell counts, e.g. 100,200,400
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
    },
}

fn load(cli: &Cli) -> Result<SimConfig, HarnessError> {
    let mut config = match (&cli.config, cli.example) {
        (Some(_), Some(_)) => {
            return Err(HarnessError::Config("use either --config or --example, not both".to_string()))
        }
        (Some(path), None) => SimConfig::from_file(path)?,
        (None, Some(k)) => preset(k)?,
        (None, None) => return Err(HarnessError::Config("one of --config or --example is required".to_string())),
    };
    let mut overrides = Overrides {
        output_dir: cli.out.clone(),
        n_cells: cli.cells,
        gamma: cli.gamma,
        t_end: cli.t_end,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Compare { particles } => overrides.particles = *particles,
        Command::Converge { levels } => overrides.levels = levels.clone(),
        _ => {}
    }
    config.apply(&overrides)?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|config| match cli.command {
        Command::Simulate => cmd_simulate(&config),
        Command::Particles => cmd_particles(&config),
        Command::Compare { .. } => cmd_compare(&config),
        Command::Converge { .. } => cmd_converge(&config),
    });
    match result {
        Ok(manifest) => {
            println!(
                "{}: wrote {} files to {} in {:.2}s",
                manifest.command,
                manifest.files.len() + 1,
                manifest.config.output_dir.display(),
                manifest.runtime_seconds
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
