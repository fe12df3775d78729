//! `lingua-adapt`: the tokenizer-adaptation pipeline as subcommands. Every
//! value can come from a flag or from a `--config` JSON file (flags win);
//! errors leave as one JSON record on stderr with exit code 2 (user error)
//! or 1 (internal).

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lingua_adapt::metrics::TaskKind;
use lingua_adapt::{Error, Result};

use config::Overlay;

#[derive(Parser)]
#[command(
    name = "lingua-adapt",
    version,
    about = "Adapt a subword tokenizer and toy LM to a new language"
)]
struct Cli {
    /// JSON file with default values for this command's flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a byte-fallback BPE tokenizer on a corpus
    TrainTokenizer(TrainTokenizerArgs),
    /// Append one tokenizer's novel tokens to another at lower priority
    MergeVocab(MergeVocabArgs),
    /// Fertility across a range of extension vocabulary sizes (CSV + SVG)
    SweepVocab(SweepVocabArgs),
    /// Grow a checkpoint's embedding tables to a merged vocabulary
    InitEmbeddings(InitEmbeddingsArgs),
    /// Train the toy LM (fresh or resumed), with optional warm start
    TrainLm(TrainLmArgs),
    /// Score a task set and write a metrics report
    Eval(EvalArgs),
    /// Per-metric deltas between two metrics reports
    Compare(CompareArgs),
}

#[derive(Args)]
pub struct TrainTokenizerArgs {
    /// Corpus file: one document per line (.jsonl: records with a "text" field)
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Target vocabulary size (>= 257: 1 special + 256 byte tokens)
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Train on a seeded sample of this many documents
    #[arg(long)]
    sample_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output tokenizer model file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MergeVocabArgs {
    /// Base tokenizer model file
    #[arg(long)]
    base: Option<PathBuf>,
    /// Tokenizer whose novel tokens get appended
    #[arg(long)]
    extra: Option<PathBuf>,
    /// Output merged tokenizer model file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output merge report (JSON)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepVocabArgs {
    /// Base tokenizer model file
    #[arg(long)]
    base: Option<PathBuf>,
    /// Corpus to train each extension tokenizer on
    #[arg(long)]
    corpus_train: Option<PathBuf>,
    /// Corpus to measure fertility on
    #[arg(long)]
    corpus_eval: Option<PathBuf>,
    /// Comma-separated extension vocabulary sizes, e.g. 1000,5000,10000
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output stem: writes <out>.csv and <out>.svg
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Mean,
    Random,
    RandomToken,
    Focus,
}

#[derive(Args)]
pub struct InitEmbeddingsArgs {
    /// Checkpoint directory sized for the base tokenizer
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    base_tok: Option<PathBuf>,
    /// Merged tokenizer produced by merge-vocab
    #[arg(long)]
    merged_tok: Option<PathBuf>,
    /// How to fill the added rows
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Auxiliary embedding table (focus only): one row per merged-vocab token
    #[arg(long)]
    aux: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Neighbours used by the focus strategy
    #[arg(long)]
    focus_k: Option<usize>,
    /// Output checkpoint directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainLmArgs {
    /// Resume from this checkpoint directory (omit to train a fresh model)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Optimizer steps to run (0 with --warm-start-frac for a warm start only)
    #[arg(long)]
    steps: Option<usize>,
    /// Linear-warmup steps of the cosine schedule
    #[arg(long)]
    warmup: Option<usize>,
    /// Peak learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// First run this corpus fraction as embedding-only warm-start steps
    #[arg(long)]
    warm_start_frac: Option<f64>,
    /// Update embeddings only; W1/b1 stay frozen
    #[arg(long)]
    freeze_body: bool,
    /// Init/shuffle seed for a fresh model (resumed models keep their own)
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Context window of a fresh model
    #[arg(long)]
    context_k: Option<usize>,
    /// Embedding width of a fresh model
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Hidden width of a fresh model
    #[arg(long)]
    hidden_h: Option<usize>,
    /// Output checkpoint directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-step loss curve here (CSV)
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskKindArg {
    Mc,
    Gen,
}

impl From<TaskKindArg> for TaskKind {
    fn from(k: TaskKindArg) -> TaskKind {
        match k {
            TaskKindArg::Mc => TaskKind::MultipleChoice,
            TaskKindArg::Gen => TaskKind::Generation,
        }
    }
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint directory to evaluate
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    /// Task file: one JSON record per line
    #[arg(long)]
    task: Option<PathBuf>,
    /// mc: prompt/choices/label records; gen: prompt/reference records
    #[arg(long, value_enum)]
    kind: Option<TaskKindArg>,
    /// Generation cap per item (gen tasks)
    #[arg(long)]
    max_tokens: Option<usize>,
    /// merge-vocab report locating the added tokens (enables %Gen)
    #[arg(long)]
    added_from: Option<PathBuf>,
    /// Output metrics report (JSON)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    base_report: Option<PathBuf>,
    #[arg(long)]
    adapted_report: Option<PathBuf>,
    /// Output stem: writes <out>.csv and <out>.json
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    apply_thread_cap()?;
    let cfg = Overlay::load(cli.config.as_deref())?;
    match &cli.command {
        Command::TrainTokenizer(args) => commands::train_tokenizer(args, &cfg),
        Command::MergeVocab(args) => commands::merge_vocab(args, &cfg),
        Command::SweepVocab(args) => commands::sweep_vocab(args, &cfg),
        Command::InitEmbeddings(args) => commands::init_embeddings(args, &cfg),
        Command::TrainLm(args) => commands::train_lm(args, &cfg),
        Command::Eval(args) => commands::eval(args, &cfg),
        Command::Compare(args) => commands::compare(args, &cfg),
    }
}

/// `LINGUA_ADAPT_THREADS` caps worker threads (default: machine cores).
fn apply_thread_cap() -> Result<()> {
    let Some(raw) = std::env::var_os("LINGUA_ADAPT_THREADS") else {
        return Ok(());
    };
    let text = raw.to_string_lossy();
    let n: usize = text.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "LINGUA_ADAPT_THREADS must be a positive integer, got {text:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool setup: {e}")))
}
