mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Learn, analyse and benchmark splitting schemes for the 1-D Schrodinger equation.
#[derive(Debug, Parser)]
#[command(name = "splitlearn", version, about)]
struct Cli {
    /// Worker threads for batch-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled dataset of (u0, u_ref) pairs.
    GenData(GenDataArgs),
    /// Screen candidates and fine-tune them with Adam.
    Train(TrainArgs),
    /// Loss of one or more schemes on a dataset.
    Eval(EvalArgs),
    /// Error quantiles over a list of step counts.
    Converge(ConvergeArgs),
    /// Fit E(h) = C2 h^2 + C4 h^4 + C6 h^6 to a convergence CSV.
    Fit(FitArgs),
    /// Accuracy and speed relative to a baseline at a subflow budget.
    Advantage(AdvantageArgs),
    /// Closest fourth-order scheme to a symmetric scheme.
    Project(ProjectArgs),
    /// Path pictures of schemes as SVG and CSV.
    Visualize(VisualizeArgs),
    /// Finite-difference Hessian of the validation loss at a scheme.
    Hessian(HessianArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
            a / b
        }
        None => s.parse().map_err(|e| format!("{e}"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not a finite number"))
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProblemArgs {
    /// Grid points (even).
    #[arg(long = "M", default_value_t = 200)]
    #[serde(rename = "M")]
    pub m: usize,
    /// Half-width of the periodic domain [-L, L].
    #[arg(long = "L", default_value_t = 10.0)]
    #[serde(rename = "L")]
    pub l: f64,
    /// Quartic potential coefficients c4,c2,c1.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "1,-10,0")]
    pub potential: Vec<f64>,
    /// Final time.
    #[arg(long = "T", default_value_t = 10.0)]
    #[serde(rename = "T")]
    pub t: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Mean of the Gaussian centres.
    #[arg(long, allow_hyphen_values = true, default_value_t = -(5f64.sqrt()))]
    pub xcent: f64,
    /// Standard deviation of the Gaussian centres.
    #[arg(long, default_value_t = 0.1)]
    pub xstd: f64,
    /// Gaussian width.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub problem: ProblemArgs,
    /// Stage count. K <= 5 defaults to a grid search, larger K to random search.
    #[arg(long = "K", default_value_t = 5)]
    #[serde(rename = "K")]
    pub k: usize,
    /// `grid[:lo:hi:step]` or `random:count[:lo:hi]`.
    #[arg(long, allow_hyphen_values = true)]
    pub candidates: Option<String>,
    /// Keep at most this many screened candidates.
    #[arg(long)]
    pub keep: Option<usize>,
    /// Minimum distance between screened candidates.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Screening threshold on the loss (default: ten times the best).
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Multiplicative learning-rate decay per iteration.
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Trace the validation loss every this many iterations (0: never).
    #[arg(long)]
    pub val_every: Option<usize>,
    /// Step size, e.g. `1/7`.
    #[arg(long, value_parser = parse_real, default_value = "1/7")]
    pub h: f64,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also report the validation-loss Hessian at the best scheme.
    #[arg(long)]
    #[serde(default)]
    pub hessian: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Built-in scheme names or scheme files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub scheme: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_real, default_value = "1/7")]
    pub h: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ConvergeArgs {
    /// Built-in scheme names or scheme files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub scheme: Vec<String>,
    /// Dataset directory.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub data: Option<PathBuf>,
    /// Generate fresh data for a named configuration such as `T1-U1-V2`.
    #[arg(long)]
    pub config: Option<String>,
    /// Samples generated with `--config`.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Seed used with `--config`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "M", default_value_t = 200)]
    #[serde(rename = "M")]
    pub m: usize,
    #[arg(long = "L", default_value_t = 10.0)]
    #[serde(rename = "L")]
    pub l: f64,
    /// Ascending step counts.
    #[arg(long, value_delimiter = ',', default_value = "35,70,140,280,560,1120,2240")]
    pub ns: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Median,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Convergence CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Only fit these schemes (default: every scheme in the file).
    #[arg(long, value_delimiter = ',')]
    pub scheme: Vec<String>,
    #[arg(long, value_enum, default_value_t = Statistic::Median)]
    pub stat: Statistic,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AdvantageArgs {
    /// Convergence CSVs.
    #[arg(long, value_delimiter = ',', required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value = "yoshida")]
    pub baseline: String,
    /// Subflow-evaluation budget.
    #[arg(long, default_value_t = 2506.0)]
    pub budget: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProjectArgs {
    /// Built-in scheme name or scheme file.
    #[arg(long)]
    pub scheme: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct VisualizeArgs {
    /// Built-in scheme names or scheme files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub scheme: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct HessianArgs {
    /// Built-in scheme name or scheme file (must be symmetric).
    #[arg(long)]
    pub scheme: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_real, default_value = "1/7")]
    pub h: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1\n\nFor more information, try '--help'.");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<commands::UsageError>() {
                eprintln!("error: {u}\n\nFor more information, try '--help'.");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
