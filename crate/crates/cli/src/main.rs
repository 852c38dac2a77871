//! `zapfield` command-line harness.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zapfield::stats::Alternative;

use config::Optimizer;

#[derive(Parser)]
#[command(
    name = "zapfield",
    version,
    about = "Prompt-driven vector-field control of simulated cell collectives"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trajectory.
    Simulate(SimulateArgs),
    /// Score a genome against a prompt.
    Evaluate(EvaluateArgs),
    /// Run ES or GA campaigns over grid sizes and seeds.
    Evolve(EvolveArgs),
    /// Wilcoxon test of generation-0 against final best fitness across runs.
    Compare(CompareArgs),
    /// Print the cosine-similarity matrix of prompt embeddings as CSV.
    Embed(EmbedArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Genome JSON produced by `evolve`.
    #[arg(long, conflicts_with = "constant_field", required_unless_present = "constant_field")]
    pub genome: Option<PathBuf>,
    /// Uniform field `dx,dy` applied everywhere.
    #[arg(long, value_name = "DX,DY", value_parser = parse_pair, allow_hyphen_values = true)]
    pub constant_field: Option<(f64, f64)>,
    /// Prompt fed to the genome's controller.
    #[arg(long, default_value = "cluster")]
    pub prompt: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Number of cells.
    #[arg(long)]
    pub n: Option<usize>,
    /// Grid side for `--constant-field`.
    #[arg(long, default_value_t = 2)]
    pub grid: usize,
    /// Simulation config JSON; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding table JSON (prompt -> 768 floats).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Also write distance.png and layout.png.
    #[arg(long)]
    pub render: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub genome: PathBuf,
    #[arg(long, default_value = "cluster")]
    pub prompt: String,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Classify through the service at $ZAPFIELD_EVALUATOR_URL.
    #[arg(long)]
    pub external: bool,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Also write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvolveArgs {
    /// Experiment config JSON; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    /// Comma-separated grid sides, e.g. `2,3,5`.
    #[arg(long, value_delimiter = ',')]
    pub grids: Option<Vec<usize>>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    /// Generations for the chosen optimizer.
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub pop_size: Option<usize>,
    #[arg(long)]
    pub tournament_k: Option<usize>,
    /// Start from the full-size profile instead of the desk profile.
    #[arg(long)]
    pub paper_scale: bool,
    /// Concurrent runs; defaults to the number of CPUs.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Classify through the service at $ZAPFIELD_EVALUATOR_URL.
    #[arg(long)]
    pub external: bool,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Directory searched recursively for `log.csv` files.
    pub input: PathBuf,
    #[arg(long, default_value = "two-sided", value_parser = parse_alternative)]
    pub alternative: Alternative,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    pub json: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-generation mean/std/min/max of best fitness here.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(required = true)]
    pub prompts: Vec<String>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected DX,DY, got {s:?}"))?;
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("{t:?} is not a finite number"))
    };
    Ok((num(a)?, num(b)?))
}

fn parse_alternative(s: &str) -> Result<Alternative, String> {
    match s {
        "two-sided" => Ok(Alternative::TwoSided),
        "greater" => Ok(Alternative::Greater),
        "less" => Ok(Alternative::Less),
        other => Err(format!(
            "unknown alternative {other:?}, expected two-sided, greater or less"
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Evolve(a) => commands::evolve(a),
        Command::Compare(a) => commands::compare(a),
        Command::Embed(a) => commands::embed(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zapfield: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
