//! `treeprobe` command-line tool: data preparation, synthetic data, training,
//! hyperparameter search, evaluation and model comparison.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use treeprobe::ErrorKind;

#[derive(Debug, Parser)]
#[command(
    name = "treeprobe",
    version,
    about = "Structural probe vs. structured perceptron toolkit"
)]
struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter a CoNLL-U treebank by length, cap it and split it into train/dev/test.
    Prepare(PrepareArgs),
    /// Write a synthetic treebank and its exact tree embeddings.
    Synth(SynthArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Random hyperparameter search; keeps the trial with the lowest dev loss.
    Search(SearchArgs),
    /// Decode and score a split with a trained checkpoint.
    Eval(EvalArgs),
    /// Tabulate metric deltas between pairs of evaluation reports.
    Compare(CompareArgs),
    /// Print the header of an embedding container or checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub treebank: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep at most this many sentences after length filtering (0 keeps all).
    #[arg(long, default_value_t = 0)]
    pub cap: usize,
    /// Relative train:dev:test sizes.
    #[arg(long, default_value = "8:1:1")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TreeSource {
    /// Uniformly random labelled trees.
    Random,
    /// Gold trees of existing CoNLL-U files.
    FromTreebank,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = TreeSource::Random)]
    pub source: TreeSource,
    /// Input treebanks for `--source from-treebank` (repeatable).
    #[arg(long)]
    pub treebank: Vec<PathBuf>,
    /// Number of random trees.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 5)]
    pub min_len: usize,
    #[arg(long, default_value_t = 15)]
    pub max_len: usize,
    /// File stem for random output.
    #[arg(long, default_value = "synth")]
    pub name: String,
    #[arg(long)]
    pub dim: usize,
    /// Standard deviation of the Gaussian noise added to every coordinate.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// One flag per configuration key; each overrides the config file.
#[derive(Debug, Default, Args)]
pub struct ConfigFlags {
    #[arg(long)]
    pub model_kind: Option<String>,
    #[arg(long)]
    pub rank: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub dropout_rate: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub squared: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub rank_choices: Option<String>,
    #[arg(long)]
    pub lr_min: Option<String>,
    #[arg(long)]
    pub lr_max: Option<String>,
    #[arg(long)]
    pub dropout_min: Option<String>,
    #[arg(long)]
    pub dropout_max: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
}

impl ConfigFlags {
    pub fn overrides(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("model_kind", &self.model_kind),
            ("rank", &self.rank),
            ("learning_rate", &self.learning_rate),
            ("dropout_rate", &self.dropout_rate),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("squared", &self.squared),
            ("seed", &self.seed),
            ("rank_choices", &self.rank_choices),
            ("lr_min", &self.lr_min),
            ("lr_max", &self.lr_max),
            ("dropout_min", &self.dropout_min),
            ("dropout_max", &self.dropout_max),
            ("trials", &self.trials),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding `<part>.conllu` and `<part>.sdeb` files.
    #[arg(long)]
    pub data: PathBuf,
    /// Sentence ids the embedding extractor skipped, one per line.
    #[arg(long)]
    pub skip_list: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Trials trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Which split to score.
    #[arg(long, default_value = "test")]
    pub part: String,
    /// Leave PUNCT tokens out of UUAS edge counts.
    #[arg(long)]
    pub exclude_punct: bool,
    /// `allpairs` or `lengthbin`.
    #[arg(long, default_value = "allpairs")]
    pub dspr_mode: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `LABEL=REPORT_A,REPORT_B`; repeat once per language or run.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    /// Also write the table (and per-sentence deltas) into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Exit status for an error chain: 1 config/usage, 2 data, 3 numeric.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<treeprobe::Error>() {
            return match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Search(a) => commands::search(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
