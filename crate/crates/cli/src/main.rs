use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hednet_cli::commands::{self, BenchArgs, ForwardArgs, GradcheckArgs, GridPreset, Precision};
use hednet_cli::gradcheck::GradLayer;
use hednet_cli::CliResult;

/// Sparse encoder-decoder backbone for point clouds.
#[derive(Parser)]
#[command(name = "hednet", version)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxelize a point cloud into a sparse tensor file.
    Voxelize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Take the voxel grid from this network config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "waymo")]
        grid: GridPreset,
    },
    /// Run the network and write the BEV map and a JSON report.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check one layer kind instead of all.
        #[arg(long, value_enum)]
        layer: Option<GradLayer>,
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Time every layer on seeded random input.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write seeded random weights for a config.
    InitWeights {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Voxelize { input, output, config, grid } => {
            let spec = commands::grid_for(config.as_ref(), grid)?;
            commands::voxelize(&input, &spec, &output)
        }
        Command::Forward { config, weights, input, output, report, precision } => commands::forward(&ForwardArgs {
            config: &config,
            weights: &weights,
            input: &input,
            output: &output,
            report: report.as_deref(),
            precision,
        })
        .map(|_| ()),
        Command::Gradcheck { config, seed, layer, instances, corrupt_backward } => {
            commands::run_gradcheck(&GradcheckArgs {
                config: config.as_deref(),
                seed,
                layer,
                instances,
                corrupt: corrupt_backward,
            })
        }
        Command::Bench { config, weights, density, repeats, seed, precision, report } => commands::bench(&BenchArgs {
            config: &config,
            weights: &weights,
            density,
            repeats,
            seed,
            precision,
            report: report.as_deref(),
        }),
        Command::InitWeights { config, seed, output } => commands::init_weights(&config, seed, &output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(4);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
