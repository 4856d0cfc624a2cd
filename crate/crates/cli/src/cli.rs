use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::OutputFormat;

#[derive(Debug, Parser)]
#[command(
    name = "hypergrid",
    version,
    about = "Spatial indexes for large static multidimensional point sets"
)]
pub struct Cli {
    /// Seed for every randomized operation.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for parallel operations (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Human)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a Gaussian mixture with uniform outliers.
    Generate(GenerateArgs),
    /// Convert between CSV and the binary point format.
    Import(ImportArgs),
    /// Project onto the leading principal components.
    Pca(PcaArgs),
    /// Standardize every column to unit variance.
    Whiten(WhitenArgs),
    /// Build the layered grid sidecar.
    GridBuild(GridBuildArgs),
    /// Progressive sample of at least n points from a 3-D box.
    Sample(SampleArgs),
    /// Build the kd-tree sidecar.
    KdBuild(KdBuildArgs),
    /// Points inside a polytope given as JSON halfspaces.
    Query(QueryArgs),
    /// Exact k nearest neighbors of a point.
    Knn(KnnArgs),
    #[command(subcommand)]
    Voronoi(VoronoiCommand),
    /// Basin spanning tree clustering over Voronoi cell densities.
    Cluster(ClusterArgs),
    /// Local polynomial target estimation from a reference set.
    Estimate(EstimateArgs),
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run the HTTP query service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub components: usize,
    /// Minimum distance between component means, in stdevs.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.01)]
    pub outliers: f64,
    /// Output file; `.csv` selects CSV, anything else the binary format.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Also save the fitted transform as JSON.
    #[arg(long)]
    pub transform: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WhitenArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub transform: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridBuildArgs {
    pub data: PathBuf,
    /// The three indexed columns.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    pub base: usize,
    /// Sidecar path (default: data path with `.hglg`).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub data: PathBuf,
    /// Grid sidecar; built in memory from --dims/--base/--seed when absent.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    pub base: usize,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub lo: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub hi: Vec<f64>,
    #[arg(long)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct KdBuildArgs {
    pub data: PathBuf,
    /// Sidecar path (default: data path with `.hgkd`).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// After building, print the selectivity curve at these targets.
    #[arg(long, value_delimiter = ',')]
    pub selectivity_report: Option<Vec<f64>>,
    #[arg(long, default_value_t = 20)]
    pub queries: usize,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub kd: Option<PathBuf>,
    /// JSON file holding `{"halfspaces": [{"normal": [...], "offset": x}]}`.
    #[arg(long)]
    pub polytope: PathBuf,
}

#[derive(Debug, Args)]
pub struct KnnArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub kd: Option<PathBuf>,
    /// Query coordinates, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub query: Vec<f64>,
    #[arg(long)]
    pub k: usize,
}

#[derive(Debug, Subcommand)]
pub enum VoronoiCommand {
    /// Pick seeds, assign points, build adjacency, volumes and order.
    Build(VoronoiBuildArgs),
    /// Cell containing a point, by directed walk.
    Locate(VoronoiLocateArgs),
    /// Per-cell member count, volume and density.
    Density(VoronoiDensityArgs),
}

#[derive(Debug, Args)]
pub struct VoronoiBuildArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub seeds: usize,
    /// Uniform probes for adjacency (default 20 per seed).
    #[arg(long)]
    pub probes: Option<usize>,
    /// Monte-Carlo volume samples (default 100 per seed).
    #[arg(long)]
    pub volume_samples: Option<usize>,
    /// Sidecar path (default: data path with `.hgvr`).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VoronoiLocateArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DensityArg {
    /// Member count over cell volume.
    Count,
    /// One over cell volume.
    Inverse,
}

#[derive(Debug, Args)]
pub struct VoronoiDensityArgs {
    pub data: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, value_enum, default_value_t = DensityArg::Count)]
    pub mode: DensityArg,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    pub data: PathBuf,
    /// Seeds for a fresh Voronoi index; ignored with --index.
    #[arg(long, required_unless_present = "index")]
    pub nseed: Option<usize>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DensityArg::Count)]
    pub mode: DensityArg,
    /// Merge basins separated by a dip below this fraction of the peak.
    #[arg(long)]
    pub merge_tau: Option<f64>,
    /// Per-point cluster ids as CSV (`id,cluster`).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct EstimateArgs {
    #[command(subcommand)]
    pub action: Option<EstimateAction>,
    /// Reference set with a target column.
    #[arg(long = "ref", required = true)]
    pub reference: Option<PathBuf>,
    /// Points to estimate targets for.
    #[arg(long, required = true)]
    pub unknown: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Write the unknown points with the estimated target column.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Neighbors per fit (default: 4 per order-1 coefficient).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub order: u8,
    /// Ridge relative to the mean design diagonal.
    #[arg(long, default_value_t = 1e-9)]
    pub ridge: f64,
}

#[derive(Debug, Subcommand)]
pub enum EstimateAction {
    /// Cross-validated comparison of two polynomial orders.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub k: Option<usize>,
    /// Baseline order.
    #[arg(long, default_value_t = 0)]
    pub order_a: u8,
    /// Candidate order.
    #[arg(long, default_value_t = 1)]
    pub order_b: u8,
    #[arg(long, default_value_t = 1e-9)]
    pub ridge: f64,
    #[arg(long, default_value_t = 1000)]
    pub bootstrap: usize,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// kd-tree polytope queries against a full scan, per selectivity.
    Kd(BenchKdArgs),
}

#[derive(Debug, Args)]
pub struct BenchKdArgs {
    /// Dataset; a 5-D clustered mixture of --n points is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,0.25,0.5")]
    pub selectivities: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub queries: usize,
    /// Random faces added to each rotated cube.
    #[arg(long, default_value_t = 5)]
    pub extra_faces: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML service configuration.
    #[arg(long)]
    pub config: PathBuf,
}
