use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;

use entrex::clustering::Algorithm;
use entrex::config::Config;
use entrex::rdf::ParseMode;
use entrex::retrieval::{format_run, run_tag, Mode};
use entrex::stages::{self, StageError};
use entrex::text::FieldMode;

#[derive(Debug, Parser)]
#[command(name = "entrex", version, about = "Entity retrieval over RDF with cluster-based expansion")]
struct Cli {
    /// JSON config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base directory for relative artifact paths when no config is given.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Global seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Field {
    Title,
    Body,
    Both,
}

impl From<Field> for FieldMode {
    fn from(f: Field) -> Self {
        match f {
            Field::Title => FieldMode::TitleOnly,
            Field::Body => FieldMode::BodyOnly,
            Field::Both => FieldMode::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Algo {
    Xmeans,
    Spectral,
}

impl From<Algo> for Algorithm {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Xmeans => Algorithm::Xmeans,
            Algo::Spectral => Algorithm::Spectral,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus, queries, qrels and labels.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse the corpus and build the entity store.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Abort on the first malformed line.
        #[arg(long)]
        strict: bool,
    },
    /// Per-graph counts of explicit-similarity and object-property statements.
    Stats {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Build the BM25F index.
    Index,
    /// Build pruned per-type feature vectors.
    Features,
    /// MinHash/LSH bucketing of the feature vectors.
    Buckets,
    /// Cluster every bucket.
    Cluster {
        #[arg(long, value_enum)]
        algo: Algo,
    },
    /// Estimate the query type affinity model.
    TrainAffinity {
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Rank entities for one query; prints TREC lines.
    Search {
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[arg(long, value_enum, default_value = "title")]
        field: Field,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(required = true)]
        query: Vec<String>,
    },
    /// Rank every query of the queries file into a TREC run.
    Batch {
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[arg(long, value_enum, default_value = "title")]
        field: Field,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Score runs against qrels; later runs are compared with the first.
    Eval {
        #[arg(long)]
        qrels: Option<PathBuf>,
        /// Where to write the JSON summary (default: runs dir).
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<Config, StageError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(dir) = &cli.work_dir {
        config.paths.rebase(dir);
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.synth.seed = seed;
    }
    match &cli.command {
        Command::Synth { out: Some(dir) } => {
            config.paths.synth = dir.clone();
            config.paths.corpus = dir.join(entrex::synth::CORPUS_FILE);
            config.paths.queries = dir.join(entrex::synth::QUERIES_FILE);
            config.paths.qrels = dir.join(entrex::synth::QRELS_FILE);
            config.paths.training = dir.join(entrex::synth::TRAINING_FILE);
        }
        Command::Ingest { corpus, strict } => {
            if let Some(c) = corpus {
                config.paths.corpus = c.clone();
            }
            if *strict {
                config.parse_mode = ParseMode::Strict;
            }
        }
        Command::Stats { corpus: Some(c) } => config.paths.corpus = c.clone(),
        Command::TrainAffinity { training, alpha } => {
            if let Some(t) = training {
                config.paths.training = t.clone();
            }
            if let Some(a) = alpha {
                config.affinity.alpha = *a;
            }
        }
        Command::Search { k: Some(k), .. } => config.search.k = *k,
        Command::Batch { k, queries, .. } => {
            if let Some(k) = k {
                config.search.k = *k;
            }
            if let Some(q) = queries {
                config.paths.queries = q.clone();
            }
        }
        Command::Eval { qrels: Some(q), .. } => config.paths.qrels = q.clone(),
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), StageError> {
    let config = load_config(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| StageError::Internal(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Synth { .. } => stages::synth(&config)?,
        Command::Ingest { .. } => {
            let report = stages::ingest(&config)?;
            println!(
                "{} lines, {} quads, {} skipped",
                report.lines_total,
                report.quads_ok,
                report.skipped()
            );
        }
        Command::Stats { .. } => print!("{}", stages::stats(&config)?),
        Command::Index => stages::index(&config)?,
        Command::Features => stages::features(&config)?,
        Command::Buckets => stages::buckets(&config)?,
        Command::Cluster { algo } => {
            stages::cluster(&config, (*algo).into())?;
        }
        Command::TrainAffinity { .. } => {
            stages::train_affinity(&config)?;
        }
        Command::Search { mode, field, query, .. } => {
            let field = FieldMode::from(*field);
            let results = stages::search(&config, &query.join(" "), *mode, field)?;
            print!("{}", format_run("search", &results, &run_tag(*mode, field, Some(&config.hash()))));
        }
        Command::Batch { mode, field, .. } => {
            let path = stages::batch(&config, *mode, (*field).into())?;
            println!("{}", path.display());
        }
        Command::Eval { runs, summary, .. } => {
            let outcome = stages::evaluate(&config, runs, summary.as_deref())?;
            print!("{}", outcome.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
