use std::path::PathBuf;
use std::time::Duration;

use biccos_core::bab::PresolveConfig;
use biccos_core::cuts::{StrengthenConfig, DEFAULT_POOL_CAP};
use biccos_core::{BabConfig, Mode, OptimizerConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(
    name = "biccos",
    version,
    about = "Complete verification of small ReLU networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Verify one instance.
    Verify(VerifyArgs),
    /// Run every instance of a manifest under one or more modes.
    Suite(SuiteArgs),
    /// Generate random calibrated instances.
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Plain,
    BiccosBase,
    BiccosMts,
    Auto,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Plain => Mode::Plain,
            ModeArg::BiccosBase => Mode::BiccosBase,
            ModeArg::BiccosMts => Mode::BiccosMts,
            ModeArg::Auto => Mode::Auto,
        }
    }
}

/// Search settings shared by `verify` and `suite`.
#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    /// Wall-clock limit per instance, in seconds.
    #[arg(long, default_value_t = 200.0)]
    pub timeout: f64,
    /// Recorded in reports; the search itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Fraction of non-binding splits dropped when strengthening a cut.
    #[arg(long, default_value_t = 0.5)]
    pub drop_percentage: f64,
    #[arg(long, default_value_t = 5)]
    pub presolve_iters: usize,
    #[arg(long, default_value_t = 50)]
    pub presolve_pick: usize,
    #[arg(long, default_value_t = 400)]
    pub presolve_gen: usize,
    #[arg(long, default_value_t = 20)]
    pub opt_iters: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr_alpha: f64,
    #[arg(long, default_value_t = 0.02)]
    pub lr_beta: f64,
    #[arg(long, default_value_t = 0.98)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = DEFAULT_POOL_CAP)]
    pub pool_cap: usize,
    /// Unstable-neuron count above which `auto` enables the presolve.
    #[arg(long, default_value_t = 64)]
    pub auto_threshold: usize,
    /// Bounding threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

impl SearchArgs {
    pub fn config(&self, mode: Mode) -> CliResult<BabConfig> {
        if !(self.timeout.is_finite() && self.timeout >= 0.0) {
            return Err(CliError::Usage(format!(
                "--timeout must be a non-negative number, got {}",
                self.timeout
            )));
        }
        if self.presolve_gen < self.presolve_pick {
            return Err(CliError::Usage(
                "--presolve-gen must be at least --presolve-pick".into(),
            ));
        }
        let optimizer = OptimizerConfig {
            iterations: self.opt_iters,
            lr_alpha: self.lr_alpha,
            lr_beta: self.lr_beta,
            lr_decay: self.lr_decay,
            ..OptimizerConfig::default()
        };
        let config = BabConfig {
            mode,
            timeout: Duration::from_secs_f64(self.timeout),
            batch_size: self.batch_size,
            optimizer,
            strengthen: StrengthenConfig {
                drop_percentage: self.drop_percentage,
                ..StrengthenConfig::default()
            },
            presolve: PresolveConfig {
                iterations: self.presolve_iters,
                pick: self.presolve_pick,
                generated: self.presolve_gen,
                ..PresolveConfig::default()
            },
            pool_cap: self.pool_cap,
            auto_threshold: self.auto_threshold,
            workers: self.workers,
            ..BabConfig::default()
        };
        config
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write one JSON line per search iteration here.
    #[arg(long)]
    pub stats_stream: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SuiteArgs {
    /// A manifest written by `gen`, or an object with `instances` and `modes`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Modes to run; overrides the manifest's list.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub modes: Vec<ModeArg>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Instances run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Layer widths from input to output, e.g. `3-16-16-1`.
    #[arg(long, default_value = "2-8-8-1")]
    pub shape: Shape,
    #[arg(long, default_value_t = 12)]
    pub max_unstable: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub min_margin: f64,
    #[arg(long, default_value_t = 0.05)]
    pub max_margin: f64,
    /// Skip labelling by exact minimization.
    #[arg(long)]
    pub no_calibrate: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let shape = s
            .split(['-', ','])
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .map_err(|e| format!("bad width {w:?}: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if shape.len() < 3 || shape.contains(&0) {
            return Err(
                "shape needs an input, at least one hidden layer and an output, all non-zero"
                    .into(),
            );
        }
        Ok(Shape(shape))
    }
}
