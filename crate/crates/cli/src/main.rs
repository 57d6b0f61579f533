use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use facetsep::bench::Experiment;
use facetsep::denoise::DenoiseMethod;
use facetsep::synth::SourceMode;

mod commands;
mod manifest;

use commands::ScoreMethod;
use manifest::{Failure, Run};

#[derive(Parser, Debug)]
#[command(name = "facetsep", version, about = "Blind separation of nonnegative mixtures by facet component analysis")]
struct Cli {
    /// Directory receiving every output file and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Flat key=value file (rho, eps, sigma, delta, lambda, tau, grid, knn, seed).
    /// Command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Skip the first line of every input CSV.
    #[arg(long, global = true)]
    header: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Thresholds {
    /// Columns with L2 norm below this are dropped.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Largest distance from a facet plane for a point to join its group.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Smallest distance from the facet vertices for a point to join its group.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Largest allowed dot product between two selected plane normals.
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct DenoiseArgs {
    /// none, box, gauss or tv.
    #[arg(long, default_value = "none")]
    pub denoise: DenoiseMethod,
    /// Neighbourhood size for box and gauss.
    #[arg(long)]
    pub knn: Option<usize>,
    /// Gaussian kernel width for gauss.
    #[arg(long)]
    pub gauss_width: Option<f64>,
    /// ROF fidelity weight for tv; smaller smooths more.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Level-set threshold for tv.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Grid cells per side for tv.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Iteration cap of the ROF solver.
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate sources, a random mixing matrix and the mixtures.
    Gen {
        #[arg(long, default_value_t = 3)]
        sources: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// nna or facet.
        #[arg(long, default_value = "facet")]
        mode: SourceMode,
        /// Also write X_noisy.csv with white Gaussian noise at this SNR.
        #[arg(long)]
        snr_db: Option<f64>,
        #[arg(long, env = "FACETSEP_SEED")]
        seed: Option<u64>,
    },
    /// Denoise a point cloud given as one point per CSV column.
    Denoise {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        method: DenoiseArgs,
        /// Also write the smoothed distance field (tv only) as field.csv.
        #[arg(long)]
        field: bool,
    },
    /// Estimate the mixing matrix and the sources of a mixture.
    Separate {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        thresholds: Thresholds,
        #[command(flatten)]
        denoise: DenoiseArgs,
    },
    /// Score every column of a mixture by how poorly the others explain it.
    Score {
        #[arg(long = "in")]
        input: PathBuf,
        /// residual (squared NNLS residual) or edge (minimal coefficient sum).
        #[arg(long, default_value = "residual")]
        method: ScoreMethod,
    },
    /// Compare an estimated mixing matrix with the true one.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// Clean mixture, for reporting the realized SNR together with --noisy.
        #[arg(long, requires = "noisy")]
        clean: Option<PathBuf>,
        #[arg(long, requires = "clean")]
        noisy: Option<PathBuf>,
    },
    /// Run a batch experiment and write one JSON line per trial.
    Bench {
        /// random4x4, snr-sweep or tv-compare.
        #[arg(long)]
        experiment: Experiment,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, env = "FACETSEP_SEED")]
        seed: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Denoise { .. } => "denoise",
            Command::Separate { .. } => "separate",
            Command::Score { .. } => "score",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
        }
    }
}

fn dispatch(cli: &Cli, run: &mut Run) -> Result<(), Failure> {
    let cfg = commands::load_config(cli.config.as_deref())?;
    let ctx = commands::Ctx {
        cfg,
        header: cli.header,
    };
    match &cli.command {
        Command::Gen {
            sources,
            samples,
            mode,
            snr_db,
            seed,
        } => commands::gen(&ctx, run, *sources, *samples, *mode, *snr_db, *seed),
        Command::Denoise { input, method, field } => commands::denoise(&ctx, run, input, method, *field),
        Command::Separate {
            input,
            thresholds,
            denoise,
        } => commands::separate(&ctx, run, input, thresholds, denoise),
        Command::Score { input, method } => commands::score(&ctx, run, input, *method),
        Command::Eval {
            truth,
            estimate,
            clean,
            noisy,
        } => commands::eval(&ctx, run, truth, estimate, clean.as_deref().zip(noisy.as_deref())),
        Command::Bench {
            experiment,
            trials,
            seed,
        } => commands::bench(&ctx, run, *experiment, *trials, *seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut run = Run::start(cli.command.name(), &cli.out_dir);
    if let Err(e) = std::fs::create_dir_all(&cli.out_dir) {
        eprintln!("error: cannot create {}: {e}", cli.out_dir.display());
        return ExitCode::from(2);
    }
    let outcome = dispatch(&cli, &mut run);
    if let Err(e) = run.finish(&outcome) {
        eprintln!("error: cannot write manifest: {e:#}");
        return ExitCode::from(2);
    }
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.exit_code())
        }
    }
}
