use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "mathlink", version, about = "Annotate math in wiki articles with knowledge-base items")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Recommender knobs shared by `serve` and `recommend`.
#[derive(Debug, Clone, Args)]
struct RecommenderArgs {
    /// Minimum normalized Levenshtein similarity for fuzzy formula matches.
    #[arg(long)]
    fuzzy_threshold: Option<f64>,
    /// Length of each recommendation list (at most 10).
    #[arg(long)]
    cutoff: Option<usize>,
    /// Seed for the anonymized evaluation-mode source order.
    #[arg(long)]
    eval_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        /// TOML config file; MATHLINK_* variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        #[arg(long)]
        session_dir: Option<PathBuf>,
        /// Directory with arxiv.tsv, wikipedia.tsv, wikidata.tsv, formulas.json, fc_memory.json.
        #[arg(long)]
        catalog_dir: Option<PathBuf>,
        /// Read articles from this directory instead of the remote wiki.
        #[arg(long)]
        article_dir: Option<PathBuf>,
        #[command(flatten)]
        recommender: RecommenderArgs,
    },
    /// Show the math segments and tokens of an article.
    Parse {
        #[arg(long)]
        article: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Show the recommendation popup for one target.
    Recommend {
        #[arg(long)]
        article: PathBuf,
        /// `identifier:<symbol>`, `occurrence:<segment>:<token>` or `formula:<segment>`.
        #[arg(long)]
        target: String,
        #[arg(long)]
        catalog_dir: Option<PathBuf>,
        /// Anonymize and shuffle the sources.
        #[arg(long)]
        eval: bool,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        recommender: RecommenderArgs,
    },
    /// Insert qid attributes for the annotated equations of a session.
    Link {
        #[arg(long)]
        article: PathBuf,
        #[arg(long)]
        session: PathBuf,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only print the statistics.
        #[arg(long)]
        dry_run: bool,
        /// Emit `qid="Q1"` instead of `qid=Q1`.
        #[arg(long)]
        quote_attrs: bool,
        /// Leave inline math untouched.
        #[arg(long)]
        block_only: bool,
    },
    /// Concepts that needed new knowledge-base content.
    Seed {
        #[arg(long)]
        sessions: PathBuf,
        /// Formula catalog (JSON).
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        fc_memory: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Source performance and timing over a directory of sessions.
    Report {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
        /// Reference CG/DCG rows to compare against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Write the annotation table of a session.
    Export {
        #[arg(long)]
        session: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: TableFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli.command, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
