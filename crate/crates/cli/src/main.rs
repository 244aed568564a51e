use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "qkge", version, about = "Quantum-circuit knowledge-graph embeddings")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write the best checkpoint, a training log and test metrics.
    Train(TrainArgs),
    /// Filtered ranking metrics for a checkpoint.
    Eval(EvalArgs),
    /// Amplitude-amplified candidate search for one query.
    Infer(InferArgs),
    /// Entity representations as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset directory/file, or a name under $QKGE_DATA_DIR.
    #[arg(long, default_value = "kinship")]
    pub dataset: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "fqce")]
    pub model: String,
    /// Embedding dimension (circuit models: must equal 2^qubits).
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = 6)]
    pub qubits: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub kappa: Option<u32>,
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Half-width of the uniform gate-angle initialization.
    #[arg(long)]
    pub init_range: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Read the noise scale |θ| as a variance instead of a standard deviation.
    #[arg(long)]
    pub noise_variance: bool,
    /// Keep parameter noise on while evaluating.
    #[arg(long)]
    pub noise_at_eval: bool,
    #[arg(long, default_value = "mse")]
    pub loss: String,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Redraw corruptions that hit an observed triple.
    #[arg(long)]
    pub filtered_negatives: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write a value-function histogram with this many bins.
    #[arg(long)]
    pub histogram: Option<usize>,
    /// Parameter noise applied for this evaluation pass.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub noise_variance: bool,
    /// Estimate each score from this many simulated ancilla shots.
    #[arg(long)]
    pub shots: Option<u64>,
    /// Count ties against the target.
    #[arg(long)]
    pub pessimistic: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub subject: String,
    #[arg(long)]
    pub predicate: String,
    /// Use η = +1 on the solution set and -1 elsewhere.
    #[arg(long, requires = "solutions")]
    pub idealistic: bool,
    /// Comma-separated entity names.
    #[arg(long, value_delimiter = ',')]
    pub solutions: Option<Vec<String>>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub shots: u64,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "runs/infer")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "runs/embeddings.csv")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
