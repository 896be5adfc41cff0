mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use wswor::protocol::CoordinatorVariant;
use wswor::simnet::{Partitioner, SimConfig};
use wswor::streams::{StreamKind, StreamSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] wswor::Error),

    #[error("{0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("validation failed: {0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 4,
            CliError::Lib(e) => match e {
                wswor::Error::Protocol(_) => 3,
                wswor::Error::Io(_) => 4,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Distributed weighted sampling simulator and experiment harness.
#[derive(Debug, Parser)]
#[command(name = "wswor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the sampler once and write the message ledger.
    Simulate(SimulateArgs),
    /// Chi-square check of sampled sets against exact enumeration.
    ValidateSwor(ValidateArgs),
    /// Chi-square check of per-slot picks against `w_i / W`.
    ValidateSwr(ValidateArgs),
    /// Track total weight over a stream, one row per trial and probe.
    TrackL1(TrackArgs),
    /// Track residual heavy hitters, one row per trial and probe.
    TrackHh(TrackArgs),
    /// Write a generated stream as `site,id,weight` lines.
    GenStream(GenArgs),
    /// Mean message totals over a grid of unit-weight runs.
    MsgScaling(ScalingArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Unit,
    Zipf,
    SkewedGiants,
    HhLower,
    EpochLower,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Full,
    TopS,
}

impl From<Variant> for CoordinatorVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Full => CoordinatorVariant::FullBuffers,
            Variant::TopS => CoordinatorVariant::TopS,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StreamArgs {
    #[arg(long, value_enum, default_value = "unit")]
    pub kind: Kind,
    /// Stream length.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Zipf exponent.
    #[arg(long, default_value_t = 1.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2)]
    pub giants: usize,
    #[arg(long, default_value_t = 1e6)]
    pub big: f64,
    #[arg(long, default_value_t = 100)]
    pub mids: usize,
    #[arg(long, default_value_t = 100.0)]
    pub mid: f64,
    /// Heaviness parameter of the hh-lower stream.
    #[arg(long, default_value_t = 0.1)]
    pub hh_eps: f64,
    /// Number of hh-lower items.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Number of epochs in an epoch-lower stream.
    #[arg(long, default_value_t = 4)]
    pub eta: u32,
    /// Stream file for `--kind file`.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// Number of sites.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// round-robin, single-site, random, adversarial-epoch or file-order.
    /// Defaults to file-order for file and epoch-lower streams.
    #[arg(long)]
    pub partitioner: Option<Partitioner>,
    /// Rounds per network hop.
    #[arg(long, default_value_t = 1)]
    pub delivery: u32,
    #[arg(long, value_enum, default_value = "full")]
    pub variant: Variant,
    /// Check protocol invariants after every item.
    #[arg(long)]
    pub check_invariants: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Sample size.
    #[arg(long, default_value_t = 4)]
    s: usize,
    /// Also write the message transcript here.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Comma-separated weights, at most 8 for set sampling.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20_000)]
    trials: u64,
    /// Comma-separated prefix lengths to test.
    #[arg(long)]
    probes: Option<String>,
    /// Family-wise significance level, split over the probes.
    #[arg(long = "significance", default_value_t = 0.001)]
    significance: f64,
    /// Worker threads; 0 runs serially.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    #[arg(long, default_value_t = 10)]
    trials: u64,
    /// Comma-separated prefix lengths; defaults to ten evenly spaced points.
    #[arg(long)]
    probes: Option<String>,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    partitioner: Option<Partitioner>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    #[arg(long, default_value = "4,16,64")]
    ks: String,
    #[arg(long, default_value = "4,16")]
    ss: String,
    #[arg(long, default_value = "10000,100000")]
    ns: String,
    #[arg(long, default_value_t = 5)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "full")]
    variant: Variant,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl StreamArgs {
    /// The generator spec plus the `key=value` pairs that describe it.
    pub fn resolve(&self, k: usize, seed: u64) -> CliResult<(StreamSpec, Vec<(&'static str, String)>)> {
        let mut h = vec![("kind", kind_name(self.kind).to_string())];
        let kind = match self.kind {
            Kind::Unit => {
                h.push(("n", self.n.to_string()));
                StreamKind::Unit
            }
            Kind::Zipf => {
                h.push(("n", self.n.to_string()));
                h.push(("alpha", self.alpha.to_string()));
                StreamKind::Zipf { alpha: self.alpha }
            }
            Kind::SkewedGiants => {
                h.push(("n", self.n.to_string()));
                h.push(("giants", self.giants.to_string()));
                h.push(("big", self.big.to_string()));
                h.push(("mids", self.mids.to_string()));
                h.push(("mid", self.mid.to_string()));
                StreamKind::SkewedGiants {
                    giants: self.giants,
                    big: self.big,
                    mids: self.mids,
                    mid: self.mid,
                }
            }
            Kind::HhLower => {
                h.push(("hh_eps", self.hh_eps.to_string()));
                h.push(("count", self.count.to_string()));
                StreamKind::HhLower {
                    epsilon: self.hh_eps,
                    count: self.count,
                }
            }
            Kind::EpochLower => {
                h.push(("eta", self.eta.to_string()));
                StreamKind::EpochLower { k, eta: self.eta }
            }
            Kind::File => {
                let path = self
                    .input
                    .clone()
                    .ok_or_else(|| CliError::Usage("--kind file needs --input".into()))?;
                h.push(("input", path.display().to_string()));
                StreamKind::File(path)
            }
        };
        Ok((StreamSpec::new(kind, self.n, seed), h))
    }

    fn default_partitioner(&self) -> Partitioner {
        match self.kind {
            Kind::File | Kind::EpochLower => Partitioner::FileOrder,
            _ => Partitioner::RoundRobin,
        }
    }
}

impl SimArgs {
    pub fn config(&self, stream: &StreamArgs) -> SimConfig {
        let mut cfg = SimConfig::new(self.k, self.seed)
            .with_partitioner(self.partitioner.unwrap_or_else(|| stream.default_partitioner()));
        cfg.delivery = self.delivery;
        cfg.check_invariants = self.check_invariants;
        cfg
    }

    pub fn describe(&self, cfg: &SimConfig) -> Vec<(&'static str, String)> {
        vec![
            ("k", cfg.k.to_string()),
            ("seed", cfg.seed.to_string()),
            ("partitioner", cfg.partitioner.to_string()),
            ("delivery", cfg.delivery.to_string()),
            ("variant", variant_name(self.variant).to_string()),
            ("check_invariants", cfg.check_invariants.to_string()),
        ]
    }
}

pub fn kind_name(k: Kind) -> &'static str {
    match k {
        Kind::Unit => "unit",
        Kind::Zipf => "zipf",
        Kind::SkewedGiants => "skewed-giants",
        Kind::HhLower => "hh-lower",
        Kind::EpochLower => "epoch-lower",
        Kind::File => "file",
    }
}

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Full => "full",
        Variant::TopS => "top-s",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(a) => commands::simulate(&a.stream, &a.sim, a.s, a.transcript.as_deref(), a.out.as_deref()),
        Command::ValidateSwor(a) => commands::validate_swor(&a),
        Command::ValidateSwr(a) => commands::validate_swr(&a),
        Command::TrackL1(a) => commands::track_l1(&a),
        Command::TrackHh(a) => commands::track_hh(&a),
        Command::GenStream(a) => commands::gen_stream(&a.stream, a.k, a.seed, a.partitioner, a.out.as_deref()),
        Command::MsgScaling(a) => commands::msg_scaling(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wswor: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
