//! `spikesort`: synthesize, detect, sort, score and export spike data.

mod commands;
mod error;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "spikesort", version, about = "Spike sorting by discriminative subspace learning and clustering")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic recording with ground truth.
    Synth(SynthArgs),
    /// Detect and align spikes in a recording.
    Detect(DetectArgs),
    /// Sort a spike matrix with Algorithm 1, Algorithm 2 or PCA + k-means.
    Sort(SortArgs),
    /// Score sorted labels against ground truth.
    Eval(EvalArgs),
    /// Export discriminative features and their histogram for plotting.
    Features(FeaturesArgs),
    /// Accuracy sweep over noise levels for both template sets.
    Sweep(SweepArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Detect(_) => "detect",
            Command::Sort(_) => "sort",
            Command::Eval(_) => "eval",
            Command::Features(_) => "features",
            Command::Sweep(_) => "sweep",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of templates (units).
    #[arg(long, default_value_t = 3)]
    pub templates: usize,
    /// Template family: `hard` (highly correlated) or `easy`.
    #[arg(long, default_value = "hard")]
    pub mode: String,
    /// Noise standard deviation relative to a unit template peak.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// Recording length in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// Firing rate per unit in Hz.
    #[arg(long, default_value_t = 20.0)]
    pub rate: f64,
    /// Background noise model: `neural` or `bandpassed`.
    #[arg(long, default_value = "neural")]
    pub noise: String,
    #[arg(long, default_value_t = 24_000.0)]
    pub sample_rate: f64,
    #[arg(long, env = "SPIKESORT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Stem of the output files.
    #[arg(long, default_value = "synth")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Signal file (f32 samples with a `.json` sidecar).
    #[arg(long)]
    pub input: PathBuf,
    /// Output spike matrix (`.spkm`).
    #[arg(long)]
    pub out: PathBuf,
    /// Threshold in multiples of the signal RMS.
    #[arg(long, default_value_t = 3.0)]
    pub threshold: f64,
    /// `negative`, `positive` or `absolute`.
    #[arg(long, default_value = "negative")]
    pub polarity: String,
    #[arg(long, default_value_t = 20)]
    pub pre: usize,
    #[arg(long, default_value_t = 43)]
    pub post: usize,
    /// Samples after a detection during which no new spike starts; defaults to `--post`.
    #[arg(long)]
    pub lockout: Option<usize>,
    /// Cut windows at the ground-truth times in this file instead of detecting.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write the spike matrix as CSV.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "pca-kmeans")]
    PcaKmeans,
}

#[derive(Debug, Args)]
pub struct SortArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub algo: Algo,
    /// Cluster count for the PCA + k-means baseline.
    #[arg(long)]
    pub k: Option<usize>,
    /// Feature dimension of the PCA + k-means baseline.
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, env = "SPIKESORT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// k-means restarts per clustering.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Algorithm 1: largest K tried.
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// Algorithm 1: largest subspace dimension.
    #[arg(long, default_value_t = 2)]
    pub d_max: usize,
    /// Histogram smoothing bandwidth in bins.
    #[arg(long, default_value_t = 0.7)]
    pub smoothing_bins: f64,
    /// Peak prominence floor as a fraction of the highest bin.
    #[arg(long, default_value_t = 0.05)]
    pub prominence: f64,
    /// Algorithm 2: A² threshold for splitting (also gates Algorithm 1's one-cluster check).
    #[arg(long, default_value_t = 40.0)]
    pub ad_threshold: f64,
    /// Algorithm 2: smallest cluster kept; defaults to max(15, 3% of n).
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub max_depth: usize,
    /// Algorithm 2: flag spikes beyond this many SDs from their cluster mean.
    #[arg(long)]
    pub outlier_sd: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labels CSV from `sort`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Ground-truth CSV from `synth`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Peak times of the sorted spikes (from `detect`); without it labels
    /// and truth rows must correspond one to one.
    #[arg(long)]
    pub times: Option<PathBuf>,
    /// Largest distance in samples between a detected and a true peak.
    #[arg(long, default_value_t = 10)]
    pub tolerance: usize,
    /// Sample rate for the inter-spike interval histograms.
    #[arg(long, default_value_t = 24_000.0)]
    pub sample_rate: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Projection dimension (1 or 2).
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Noise levels, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15,0.2")]
    pub sigmas: Vec<f64>,
    /// Template sets: 1 = easy, 2 = hard.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub sets: Vec<usize>,
    /// Datasets per cell.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,
    /// First dataset seed; cell datasets use consecutive seeds.
    #[arg(long, env = "SPIKESORT_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let name = cli.command.name();
    if let Err(e) = commands::run(cli.command, &argv[1..]) {
        eprintln!("spikesort {name}: {e}");
        std::process::exit(e.code());
    }
}

/// Parses a recorded argument list; used by `replay`.
pub fn parse_recorded(args: &[String]) -> Result<Command, CliError> {
    let argv = std::iter::once("spikesort".to_string()).chain(args.iter().cloned());
    Cli::try_parse_from(argv)
        .map(|c| c.command)
        .map_err(|e| CliError::Usage(e.to_string()))
}
