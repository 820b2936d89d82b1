//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Init, RankRange, Rebalance, RunConfig, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "krusco",
    version,
    about = "Kruskal convolutional sparse coding"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic signal with its ground-truth model.
    Synth(SynthArgs),
    /// Learn a dictionary and activations for a signal.
    Fit(FitArgs),
    /// Rebuild a signal from a stored model.
    Reconstruct(ReconstructArgs),
    /// Report objective, distance and sparsity of a stored model.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON file with synth parameters; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub signal_shape: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub atom_shape: Option<Vec<usize>>,
    #[arg(long)]
    pub atoms: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Probability that a factor entry is nonzero.
    #[arg(long)]
    pub density: Option<f64>,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SynthArgs {
    pub fn to_config(&self) -> SynthConfig {
        SynthConfig {
            signal_shape: self.signal_shape.clone(),
            atom_shape: self.atom_shape.clone(),
            atoms: self.atoms,
            rank: self.rank,
            density: self.density,
            noise_sigma: self.noise,
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSON file with fit parameters; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Signal tensor (.npy).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Manifest written by `synth`; supplies the input and shapes.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub atom_shape: Option<Vec<usize>>,
    /// L1 weights, one value or one per mode.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Squared-norm weights, one value or one per mode.
    #[arg(long, value_delimiter = ',')]
    pub beta: Option<Vec<f64>>,
    /// Read --alpha as fractions of alpha_max at the starting state.
    #[arg(long)]
    pub relative_alpha: bool,
    #[arg(long)]
    pub loops: Option<usize>,
    /// Stop when the relative objective change of a loop falls below this.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fit dense activations without the rank constraint.
    #[arg(long)]
    pub baseline: bool,
    /// Fit every rank in LO..HI (inclusive) in parallel.
    #[arg(long, value_name = "LO..HI")]
    pub rank_sweep: Option<RankRange>,
    /// Start from this dictionary directory instead of signal patches.
    #[arg(long)]
    pub init_dict: Option<PathBuf>,
    /// Keep the dictionary fixed.
    #[arg(long)]
    pub no_dict_update: bool,
    /// Iteration cap of each mode solve.
    #[arg(long)]
    pub mode_iters: Option<usize>,
    /// Relative duality gap at which a mode solve stops.
    #[arg(long)]
    pub mode_tol: Option<f64>,
    /// Iteration cap of each dictionary solve.
    #[arg(long)]
    pub dict_iters: Option<usize>,
    /// Relative objective change at which a dictionary solve stops.
    #[arg(long)]
    pub dict_tol: Option<f64>,
    #[arg(long, value_enum)]
    pub rebalance: Option<Rebalance>,
    /// How the activations are initialised.
    #[arg(long, value_enum)]
    pub init: Option<Init>,
}

impl FitArgs {
    pub fn to_config(&self) -> RunConfig {
        RunConfig {
            input: self.input.clone(),
            manifest: self.manifest.clone(),
            out: self.out.clone(),
            atoms: self.atoms,
            rank: self.rank,
            atom_shape: self.atom_shape.clone(),
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            relative_alpha: self.relative_alpha.then_some(true),
            loops: self.loops,
            tol: self.tol,
            seed: self.seed,
            baseline: self.baseline.then_some(true),
            rank_sweep: self.rank_sweep,
            init_dict: self.init_dict.clone(),
            update_dictionary: self.no_dict_update.then_some(false),
            mode_iters: self.mode_iters,
            mode_tol: self.mode_tol,
            dict_iters: self.dict_iters,
            dict_tol: self.dict_tol,
            rebalance: self.rebalance,
            init: self.init,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Model JSON, or a directory holding model.json or manifest.json.
    #[arg(long)]
    pub model: PathBuf,
    /// Signal to compare against (.npy).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Model JSON, or a directory holding model.json or manifest.json.
    #[arg(long)]
    pub model: PathBuf,
    /// Signal (.npy).
    #[arg(long)]
    pub input: PathBuf,
    /// Override the stored L1 weights.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Override the stored squared-norm weights.
    #[arg(long, value_delimiter = ',')]
    pub beta: Option<Vec<f64>>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
