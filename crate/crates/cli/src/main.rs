mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Morphology-aware log-bilinear language models.
#[derive(Parser, Debug)]
#[command(name = "morphlm", version)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the vocabulary, factor vocabulary and word factorisation.
    Preprocess(PreprocessArgs),
    /// Partition the vocabulary into classes.
    Cluster(ClusterArgs),
    /// Train a model from a key=value configuration.
    Train(TrainArgs),
    /// Test-set perplexity, optionally broken down by frequency or label.
    Ppl(PplArgs),
    /// Word-similarity evaluation with Spearman correlation.
    Sim(SimArgs),
    /// Per-token log-probabilities for sentences read from stdin.
    Score(ScoreArgs),
    /// Write word vectors in text form.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Training corpus, one tokenised sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for vocab.tsv, factors.tsv and mu.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Fraction of singleton types mapped to UNK.
    #[arg(long, default_value_t = 0.05)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Morphological segmentations (`word<TAB>form|label ...`). Without it
    /// every word is its own single factor.
    #[arg(long)]
    pub segmentation: Option<PathBuf>,
    /// Map tokens that are less than 80% Cyrillic to UNK.
    #[arg(long)]
    pub cyrillic_filter: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClusterMethod {
    Brown,
    Freq,
    File,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, value_enum, default_value_t = ClusterMethod::Brown)]
    pub method: ClusterMethod,
    /// Corpus for bigram statistics (brown only).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Existing `class<TAB>word` file (file only).
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Defaults to round(sqrt(|V|)).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub max_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides applied after the configuration file, e.g. `--set dim=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory written by `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    /// Class file written by `cluster`; required for class-based variants.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PplArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Break down by training frequency bins.
    #[arg(long)]
    pub by_freq: bool,
    /// Training corpus for frequency bins; the vocabulary counts are used
    /// when omitted.
    #[arg(long)]
    pub train_corpus: Option<PathBuf>,
    /// Per-token label file; `_` marks unlabelled tokens.
    #[arg(long)]
    pub by_label: Option<PathBuf>,
    /// Emit JSON lines instead of a table.
    #[arg(long)]
    pub json: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// `word1<TAB>word2<TAB>rating` pairs.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Segmentations used to compose OOV words.
    #[arg(long)]
    pub segmentation: Option<PathBuf>,
    /// Compose OOV vectors from known factors (the default).
    #[arg(long, conflicts_with = "no_compose")]
    pub compose: bool,
    /// Use the UNK vector for every OOV word.
    #[arg(long)]
    pub no_compose: bool,
    /// Also print every pair's score.
    #[arg(long)]
    pub pairs: bool,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VectorKind {
    /// `[q; r]`, the vectors used for similarity.
    Concat,
    Context,
    Target,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = VectorKind::Concat)]
    pub kind: VectorKind,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(commands::EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Train(a) => commands::train(&a),
        Command::Ppl(a) => commands::ppl(&a),
        Command::Sim(a) => commands::sim(&a),
        Command::Score(a) => commands::score(&a),
        Command::Export(a) => commands::export(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
