//! Disk-backed pipeline stages. Each stage reads the artifacts of the stages
//! before it from the configured paths and writes its own.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::affinity::{judgments_from_tsv, AffinityModel};
use crate::clustering::{cluster_bucket, Algorithm, ClusterRecord, ClusterSpace};
use crate::config::{Config, ConfigError};
use crate::eval::{self, Comparison, MetricReport, Qrels};
use crate::features::{build_vectors, prune, read_vectors, write_vectors, FeatureVector};
use crate::lsh::{bucket_entities, fnv1a, read_buckets, splitmix64, write_buckets, MinHasher};
use crate::rdf::{open_source, read_all, IngestError, IngestReport};
use crate::retrieval::{format_run, parse_queries, run_tag, Engine, Mode, QueryRecord, RankedResult, VectorSpace};
use crate::store::{corpus_stats, format_corpus_stats, EntityStore, StoreError};
use crate::synth;
use crate::text::{FieldMode, InvertedIndex};

pub const TYPES_FILE: &str = "types.tsv";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing {artifact} at {path} (run `{stage}` first)")]
    MissingArtifact {
        artifact: &'static str,
        stage: &'static str,
        path: PathBuf,
    },
    #[error("cannot parse {what}: {reason}")]
    InputParse { what: String, reason: String },
    #[error("{0}")]
    Internal(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Config(_) => 2,
            StageError::MissingArtifact { .. } => 3,
            StageError::InputParse { .. } => 4,
            StageError::Internal(_) => 5,
        }
    }

    fn parse(what: impl Into<String>, reason: impl ToString) -> Self {
        StageError::InputParse {
            what: what.into(),
            reason: reason.to_string(),
        }
    }

    fn internal(context: &str, e: impl std::fmt::Display) -> Self {
        StageError::Internal(format!("{context}: {e}"))
    }
}

type Result<T> = std::result::Result<T, StageError>;

fn require(path: &Path, artifact: &'static str, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(StageError::MissingArtifact {
            artifact,
            stage,
            path: path.to_path_buf(),
        })
    }
}

fn read_text(path: &Path, artifact: &'static str, stage: &'static str) -> Result<String> {
    require(path, artifact, stage)?;
    fs::read_to_string(path).map_err(|e| StageError::internal(&format!("reading {}", path.display()), e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| StageError::internal(&format!("creating {}", dir.display()), e))?;
    }
    fs::write(path, contents).map_err(|e| StageError::internal(&format!("writing {}", path.display()), e))
}

/// Stable file stem for an entity type IRI.
pub fn type_key(entity_type: &str) -> String {
    format!("{:x}", Sha256::digest(entity_type.as_bytes()))[..16].to_string()
}

fn read_types(dir: &Path, stage: &'static str) -> Result<Vec<(String, String)>> {
    let text = read_text(&dir.join(TYPES_FILE), "type table", stage)?;
    text.lines()
        .map(|l| {
            l.split_once('\t')
                .map(|(k, t)| (k.to_string(), t.to_string()))
                .ok_or_else(|| StageError::parse(dir.join(TYPES_FILE).display().to_string(), format!("bad line {l:?}")))
        })
        .collect()
}

fn write_types(dir: &Path, types: &[(String, String)]) -> Result<()> {
    let body: String = types.iter().map(|(k, t)| format!("{k}\t{t}\n")).collect();
    write(&dir.join(TYPES_FILE), body)
}

fn read_corpus(config: &Config) -> Result<(Vec<crate::rdf::Quad>, IngestReport)> {
    let path = &config.paths.corpus;
    require(path, "corpus", "synth")?;
    let reader = open_source(path).map_err(|e| StageError::internal(&format!("opening {}", path.display()), e))?;
    read_all(reader, config.parse_mode).map_err(|e| match e {
        IngestError::Parse { .. } => StageError::parse(path.display().to_string(), e),
        IngestError::Io(io) => StageError::internal(&format!("reading {}", path.display()), io),
    })
}

pub fn synth(config: &Config) -> Result<()> {
    let corpus = synth::generate(&config.synth);
    corpus
        .write_to(&config.paths.synth)
        .map_err(|e| StageError::internal("writing synthetic corpus", e))?;
    info!(
        "synthetic corpus: {} entities, {} queries in {}",
        config.synth.entity_count(),
        corpus.queries.lines().count(),
        config.paths.synth.display()
    );
    Ok(())
}

pub fn ingest(config: &Config) -> Result<IngestReport> {
    let (quads, report) = read_corpus(config)?;
    let store = EntityStore::assemble(&quads, &config.title_predicates).map_err(|e| match e {
        StoreError::NoTitlePredicates => StageError::Config(ConfigError::Invalid {
            key: "title_predicates".into(),
            reason: e.to_string(),
        }),
        other => StageError::internal("assembling store", other),
    })?;
    store
        .save(&config.paths.store)
        .map_err(|e| StageError::internal("saving store", e))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write(&config.paths.store.join(INGEST_REPORT_FILE), json)?;
    info!(
        "ingested {} quads ({} lines skipped) into {} entities",
        report.quads_ok,
        report.skipped(),
        store.len()
    );
    Ok(report)
}

pub fn stats(config: &Config) -> Result<String> {
    let (quads, _) = read_corpus(config)?;
    Ok(format_corpus_stats(&corpus_stats(&quads)))
}

pub fn load_store(config: &Config) -> Result<EntityStore> {
    require(&config.paths.store.join("manifest.json"), "entity store", "ingest")?;
    EntityStore::load(&config.paths.store).map_err(|e| StageError::internal("loading store", e))
}

pub fn index(config: &Config) -> Result<()> {
    let store = load_store(config)?;
    let index = InvertedIndex::build(&store);
    index
        .save(&config.paths.index)
        .map_err(|e| StageError::internal("saving index", e))?;
    info!("indexed {} entities", index.stats().n);
    Ok(())
}

pub fn load_index(config: &Config) -> Result<InvertedIndex> {
    require(&config.paths.index.join(crate::text::STATS_FILE), "text index", "index")?;
    InvertedIndex::load(&config.paths.index).map_err(|e| StageError::internal("loading index", e))
}

pub fn features(config: &Config) -> Result<()> {
    let store = load_store(config)?;
    let dir = &config.paths.vectors;
    let mut types = Vec::new();
    for ty in store.types().map(String::from).collect::<Vec<_>>() {
        let profiles: Vec<_> = store.iterate_by_type(&ty).collect();
        let vectors = prune(build_vectors(&profiles), &config.features);
        let key = type_key(&ty);
        fs::create_dir_all(dir).map_err(|e| StageError::internal("creating vectors dir", e))?;
        write_vectors(&dir.join(format!("{key}.vec")), &vectors)
            .map_err(|e| StageError::internal("writing vectors", e))?;
        info!("{ty}: {} vectors", vectors.len());
        types.push((key, ty));
    }
    write_types(dir, &types)
}

fn load_type_vectors(config: &Config, key: &str) -> Result<Vec<FeatureVector>> {
    let path = config.paths.vectors.join(format!("{key}.vec"));
    require(&path, "feature vectors", "features")?;
    read_vectors(&path).map_err(|e| StageError::internal(&format!("reading {}", path.display()), e))
}

pub fn load_vectors(config: &Config) -> Result<VectorSpace> {
    let mut space = VectorSpace::default();
    for (key, ty) in read_types(&config.paths.vectors, "features")? {
        space.insert(&ty, load_type_vectors(config, &key)?);
    }
    Ok(space)
}

pub fn buckets(config: &Config) -> Result<()> {
    let types = read_types(&config.paths.vectors, "features")?;
    let hasher = MinHasher::new(&config.lsh);
    for (key, ty) in &types {
        let vectors = load_type_vectors(config, key)?;
        let signatures: Vec<_> = vectors
            .par_iter()
            .map(|v| {
                let keys: Vec<String> = v.keys().map(|k| k.to_string()).collect();
                hasher.signature(&v.uri, keys.iter().map(String::as_str))
            })
            .collect();
        let buckets = bucket_entities(ty, &signatures, &config.lsh).map_err(|e| StageError::internal("bucketing", e))?;
        fs::create_dir_all(&config.paths.buckets).map_err(|e| StageError::internal("creating buckets dir", e))?;
        write_buckets(&config.paths.buckets.join(format!("{key}.tsv")), &buckets)
            .map_err(|e| StageError::internal("writing buckets", e))?;
        info!("{ty}: {} entities in {} buckets", vectors.len(), buckets.len());
    }
    write_types(&config.paths.buckets, &types)
}

fn bucket_seed(global: u64, entity_type: &str, bucket_id: usize) -> u64 {
    splitmix64(global ^ fnv1a(entity_type.as_bytes()) ^ (bucket_id as u64).rotate_left(32))
}

pub fn cluster(config: &Config, algorithm: Algorithm) -> Result<ClusterSpace> {
    let types = read_types(&config.paths.buckets, "buckets")?;
    let mut records: Vec<ClusterRecord> = Vec::new();
    for (key, ty) in &types {
        let path = config.paths.buckets.join(format!("{key}.tsv"));
        require(&path, "buckets", "buckets")?;
        let buckets = read_buckets(&path, ty).map_err(|e| StageError::internal("reading buckets", e))?;
        let vectors = load_type_vectors(config, key)?;
        let lookup: HashMap<&str, &FeatureVector> = vectors.iter().map(|v| (v.uri.as_str(), v)).collect();
        let groups: Vec<Vec<Vec<String>>> = buckets
            .par_iter()
            .map(|b| {
                cluster_bucket(
                    b,
                    &lookup,
                    algorithm,
                    &config.xmeans,
                    &config.spectral,
                    bucket_seed(config.seed, ty, b.bucket_id),
                )
                .map_err(|e| StageError::internal(&format!("clustering bucket {} of {ty}", b.bucket_id), e))
            })
            .collect::<Result<_>>()?;
        for (b, gs) in buckets.iter().zip(groups) {
            for members in gs {
                records.push(ClusterRecord {
                    cluster_id: records.len(),
                    entity_type: ty.clone(),
                    bucket_id: b.bucket_id,
                    algorithm,
                    members,
                });
            }
        }
    }
    let space = ClusterSpace::new(records);
    space
        .save(&config.paths.clusters, algorithm)
        .map_err(|e| StageError::internal("saving clusters", e))?;
    info!("{algorithm}: {} clusters", space.records().len());
    Ok(space)
}

pub fn load_clusters(config: &Config, algorithm: Algorithm) -> Result<ClusterSpace> {
    require(
        &ClusterSpace::table_path(&config.paths.clusters, algorithm),
        "clusters",
        "cluster",
    )?;
    ClusterSpace::load(&config.paths.clusters, algorithm).map_err(|e| StageError::internal("loading clusters", e))
}

pub fn train_affinity(config: &Config) -> Result<AffinityModel> {
    let store = load_store(config)?;
    let text = read_text(&config.paths.training, "training judgments", "synth")?;
    let (judgments, missing) = judgments_from_tsv(&text, &store, config.affinity.min_grade)
        .map_err(|e| StageError::parse(config.paths.training.display().to_string(), e))?;
    if missing > 0 {
        warn!("{missing} judged entities are not in the store");
    }
    let model = AffinityModel::train(&judgments, config.affinity.alpha)
        .map_err(|e| StageError::parse(config.paths.training.display().to_string(), e))?;
    write(&config.paths.affinity, model.to_json())?;
    info!(
        "affinity over {} query types and {} entity types",
        model.query_types.len(),
        model.entity_types.len()
    );
    Ok(model)
}

/// Loads everything `mode` needs. The affinity model is optional; without
/// it every entity gets γ = 1.
pub fn load_engine(config: &Config, mode: Mode) -> Result<Engine> {
    let store = load_store(config)?;
    let index = load_index(config)?;
    let mut engine = Engine::new(&store, index, config.bm25f);
    if let Some(algorithm) = mode.cluster_algorithm() {
        engine = engine
            .with_vectors(load_vectors(config)?)
            .with_clusters(algorithm, load_clusters(config, algorithm)?);
    }
    if config.paths.affinity.exists() {
        let text = read_text(&config.paths.affinity, "affinity model", "train-affinity")?;
        let model = AffinityModel::from_json(&text)
            .map_err(|e| StageError::parse(config.paths.affinity.display().to_string(), e))?;
        engine = engine.with_affinity(model);
    } else {
        warn!("no affinity model at {}; using constant γ", config.paths.affinity.display());
    }
    Ok(engine)
}

pub fn search(config: &Config, text: &str, mode: Mode, field: FieldMode) -> Result<Vec<RankedResult>> {
    let engine = load_engine(config, mode)?;
    let query = QueryRecord {
        id: "search".into(),
        text: text.to_string(),
        annotated_type: None,
    };
    engine
        .final_rank(&query, mode, field, config.search.k, &config.ranking)
        .map_err(|e| StageError::parse("query", e))
}

pub fn run_path(config: &Config, mode: Mode, field: FieldMode) -> PathBuf {
    config.paths.runs.join(format!("{}.run", run_tag(mode, field, None)))
}

pub fn load_queries(config: &Config) -> Result<Vec<QueryRecord>> {
    let text = read_text(&config.paths.queries, "queries", "synth")?;
    parse_queries(&text).map_err(|e| StageError::parse(config.paths.queries.display().to_string(), e))
}

/// Ranks every query and writes a TREC run; returns its path.
pub fn batch(config: &Config, mode: Mode, field: FieldMode) -> Result<PathBuf> {
    let queries = load_queries(config)?;
    let engine = load_engine(config, mode)?;
    let tag = run_tag(mode, field, Some(&config.hash()));
    let blocks: Vec<String> = queries
        .par_iter()
        .map(|q| match engine.final_rank(q, mode, field, config.search.k, &config.ranking) {
            Ok(results) => format_run(&q.id, &results, &tag),
            Err(e) => {
                warn!("skipping query: {e}");
                String::new()
            }
        })
        .collect();
    let path = run_path(config, mode, field);
    write(&path, blocks.concat())?;
    info!("{} queries -> {}", queries.len(), path.display());
    Ok(path)
}

fn run_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub reports: Vec<MetricReport>,
    pub comparisons: Vec<Comparison>,
    pub text: String,
}

/// Scores each run against the qrels; every later run is compared with the
/// first. Writes the JSON summary to `summary` (default: the runs dir).
pub fn evaluate(config: &Config, runs: &[PathBuf], summary: Option<&Path>) -> Result<EvalOutcome> {
    let qrels_text = read_text(&config.paths.qrels, "qrels", "synth")?;
    let qrels = Qrels::parse(&qrels_text).map_err(|e| StageError::parse(config.paths.qrels.display().to_string(), e))?;
    let threshold = config.eval.relevance_threshold;
    let mut reports = Vec::new();
    let mut histograms = Vec::new();
    for path in runs {
        let text = read_text(path, "run file", "batch")?;
        let run = eval::parse_run(&text).map_err(|e| StageError::parse(path.display().to_string(), e))?;
        reports.push(eval::evaluate(&run_name(path), &run, &qrels, threshold));
        histograms.push(eval::relevance_histogram(&run, &qrels, eval::CUTOFF));
    }
    let comparisons: Vec<Comparison> = reports.iter().skip(1).map(|r| eval::compare(&reports[0], r)).collect();

    let mut text = eval::format_table(&reports);
    for c in &comparisons {
        text.push_str(&eval::format_comparison(c));
    }
    let summary_doc = eval::Summary {
        relevance_threshold: threshold,
        runs: reports
            .iter()
            .zip(histograms)
            .map(|(r, h)| eval::SummaryRun {
                name: &r.name,
                mean: &r.mean,
                relevance_histogram: h,
            })
            .collect(),
        comparisons: &comparisons,
    };
    let json = serde_json::to_string_pretty(&summary_doc).expect("summary serializes") + "\n";
    let target = summary.map_or_else(|| config.paths.runs.join(SUMMARY_FILE), Path::to_path_buf);
    write(&target, json)?;
    Ok(EvalOutcome {
        reports,
        comparisons,
        text,
    })
}

/// Every stage in order, then one run per mode and field; returns the run
/// paths keyed by mode.
pub fn run_all(config: &Config, field: FieldMode) -> Result<BTreeMap<Mode, PathBuf>> {
    synth(config)?;
    ingest(config)?;
    index(config)?;
    features(config)?;
    buckets(config)?;
    cluster(config, Algorithm::Xmeans)?;
    cluster(config, Algorithm::Spectral)?;
    train_affinity(config)?;
    Mode::ALL
        .into_iter()
        .map(|m| batch(config, m, field).map(|p| (m, p)))
        .collect()
}
