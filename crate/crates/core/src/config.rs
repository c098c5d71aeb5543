//! Pipeline configuration: artifact paths plus every parameter block.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::spectral::SpectralConfig;
use crate::clustering::xmeans::XMeansConfig;
use crate::features::PruneParams;
use crate::lsh::LshParams;
use crate::rdf::ParseMode;
use crate::retrieval::RankingParams;
use crate::synth::SynthSpec;
use crate::text::{Bm25fParams, FieldMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Syntax {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config value `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub training: PathBuf,
    pub synth: PathBuf,
    pub store: PathBuf,
    pub index: PathBuf,
    pub vectors: PathBuf,
    pub buckets: PathBuf,
    pub clusters: PathBuf,
    pub affinity: PathBuf,
    pub runs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let w = |p: &str| PathBuf::from("work").join(p);
        Paths {
            corpus: w("synth/corpus.nq"),
            queries: w("synth/queries.tsv"),
            qrels: w("synth/qrels.txt"),
            training: w("synth/training.tsv"),
            synth: w("synth"),
            store: w("store"),
            index: w("index"),
            vectors: w("vectors"),
            buckets: w("buckets"),
            clusters: w("clusters"),
            affinity: w("affinity.json"),
            runs: w("runs"),
        }
    }
}

impl Paths {
    /// Rebases every relative path onto `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.queries,
            &mut self.qrels,
            &mut self.training,
            &mut self.synth,
            &mut self.store,
            &mut self.index,
            &mut self.vectors,
            &mut self.buckets,
            &mut self.clusters,
            &mut self.affinity,
            &mut self.runs,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffinityParams {
    pub alpha: f64,
    /// Judgments below this grade do not feed the counts.
    pub min_grade: u8,
}

impl Default for AffinityParams {
    fn default() -> Self {
        AffinityParams {
            alpha: 1.0,
            min_grade: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchParams {
    /// Results per query, also the depth of the baseline list.
    pub k: usize,
    pub field: FieldMode,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            k: 10,
            field: FieldMode::TitleOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    pub relevance_threshold: u8,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            relevance_threshold: crate::eval::DEFAULT_RELEVANCE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub paths: Paths,
    pub seed: u64,
    pub parse_mode: ParseMode,
    pub title_predicates: Vec<String>,
    pub bm25f: Bm25fParams,
    pub features: PruneParams,
    pub lsh: LshParams,
    pub xmeans: XMeansConfig,
    pub spectral: SpectralConfig,
    pub ranking: RankingParams,
    pub affinity: AffinityParams,
    pub search: SearchParams,
    pub eval: EvalParams,
    pub synth: SynthSpec,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            paths: Paths::default(),
            seed: 0,
            parse_mode: ParseMode::Tolerant,
            title_predicates: crate::vocab::default_title_predicates(),
            bm25f: Bm25fParams::default(),
            features: PruneParams::default(),
            lsh: LshParams::default(),
            xmeans: XMeansConfig::default(),
            spectral: SpectralConfig::default(),
            ranking: RankingParams::default(),
            affinity: AffinityParams::default(),
            search: SearchParams::default(),
            eval: EvalParams::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Loads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_json(&text).map_err(|source| ConfigError::Syntax {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.paths.rebase(base);
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |key: &str, r: Result<(), String>| {
            r.map_err(|reason| ConfigError::Invalid {
                key: key.to_string(),
                reason,
            })
        };
        if self.title_predicates.is_empty() {
            check("title_predicates", Err("at least one predicate is required".into()))?;
        }
        check("bm25f", self.bm25f.validate())?;
        check("features", self.features.validate())?;
        check("lsh", self.lsh.validate())?;
        check("xmeans", self.xmeans.validate())?;
        check("spectral", self.spectral.validate())?;
        check("ranking", self.ranking.validate())?;
        check("synth", self.synth.validate())?;
        if !(self.affinity.alpha >= 0.0 && self.affinity.alpha.is_finite()) {
            check("affinity.alpha", Err("must be a non-negative number".into()))?;
        }
        if !(1..=5).contains(&self.affinity.min_grade) {
            check("affinity.min_grade", Err("must lie in 1..=5".into()))?;
        }
        if !(1..=5).contains(&self.eval.relevance_threshold) {
            check("eval.relevance_threshold", Err("must lie in 1..=5".into()))?;
        }
        if self.search.k == 0 {
            check("search.k", Err("must be at least 1".into()))?;
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of every setting except paths.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("paths");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        format!("{digest:x}")[..12].to_string()
    }
}
