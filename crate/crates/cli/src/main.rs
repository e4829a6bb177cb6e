mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Optimal transport maps via the discrete Monge-Ampere optimization problem.
#[derive(Parser, Debug)]
#[command(name = "dmaop", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for outputs; relative output paths are resolved against it.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Record wall-clock times in output files (makes them non-reproducible).
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Triangulate the source domain of a problem config.
    Mesh {
        #[arg(long)]
        config: PathBuf,
        /// Mesh size (overrides `mesh.h`).
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, default_value = "mesh.json")]
        out: PathBuf,
    },
    /// Solve a problem and write the solution file.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "solution.json")]
        out: PathBuf,
        /// Use this mesh instead of generating one.
        #[arg(long)]
        mesh_in: Option<PathBuf>,
        /// Where to write the generated mesh.
        #[arg(long, default_value = "mesh.json")]
        mesh_out: PathBuf,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Check constraints and discrete optimality of a solution file.
    Verify {
        #[arg(long)]
        solution: PathBuf,
        /// Feasibility tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 5)]
        max_len: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Solve on a sequence of mesh sizes and tabulate costs and errors.
    Study {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, strictly decreasing mesh sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        h: Vec<f64>,
        #[arg(long, default_value = "study.csv")]
        out: PathBuf,
    },
    /// Write SVG frames of the displacement interpolation.
    Render {
        #[arg(long)]
        solution: PathBuf,
        /// Comma-separated times in [0, 1].
        #[arg(long, value_delimiter = ',', default_values_t = render::DEFAULT_TIMES)]
        times: Vec<f64>,
        /// File name prefix of the frames.
        #[arg(long, default_value = "frame")]
        prefix: String,
    },
    /// Evaluate the optimization potential at points from a CSV file.
    Eval {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value = "values.csv")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
