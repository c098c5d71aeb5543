//! Online retrieval: query analysis, BM25F baseline, cluster expansion,
//! explicit-link expansion and the final α re-ranking.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affinity::AffinityModel;
use crate::clustering::{Algorithm, ClusterSpace};
use crate::features::{distance, FeatureVector};
use crate::store::EntityStore;
use crate::text::{normalize_scores, tokenize, Bm25fParams, FieldMode, InvertedIndex, ScoredEntity};
use crate::vocab::{is_similarity_predicate, UNTYPED};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query {0} has no tokens")]
    EmptyQuery(String),
    #[error("mode {0} needs {1} clusters, which are not loaded")]
    MissingClusters(Mode, Algorithm),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub annotated_type: Option<String>,
}

#[derive(Debug, Error)]
#[error("queries line {line}: {reason}")]
pub struct QueryFileError {
    pub line: usize,
    pub reason: String,
}

/// Parses `qid \t text [\t query_type]` lines; blank lines and `#` comments
/// are skipped.
pub fn parse_queries(text: &str) -> Result<Vec<QueryRecord>, QueryFileError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&f.len()) || f[1].trim().is_empty() {
            return Err(QueryFileError {
                line: i + 1,
                reason: "expected `qid <TAB> text [<TAB> type]`".into(),
            });
        }
        out.push(QueryRecord {
            id: f[0].to_string(),
            text: f[1].to_string(),
            annotated_type: f.get(2).map(|t| t.trim()).filter(|t| !t.is_empty()).map(String::from),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeSource {
    Annotation,
    Inferred,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAnalysis {
    pub entity_span: Vec<String>,
    pub context_terms: Vec<String>,
    pub query_type: String,
    pub type_source: TypeSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    B,
    S1,
    XM,
    SP,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::B, Mode::S1, Mode::XM, Mode::SP];

    pub fn name(self) -> &'static str {
        match self {
            Mode::B => "B",
            Mode::S1 => "S1",
            Mode::XM => "XM",
            Mode::SP => "SP",
        }
    }

    pub fn cluster_algorithm(self) -> Option<Algorithm> {
        match self {
            Mode::XM => Some(Algorithm::Xmeans),
            Mode::SP => Some(Algorithm::Spectral),
            Mode::B | Mode::S1 => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown mode {s:?} (expected B, S1, XM or SP)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankingParams {
    pub lambda_sim: f64,
    pub lambda_alpha: f64,
    pub cluster_size_max: usize,
    pub per_cluster: usize,
    pub epsilon: f64,
    /// Hop bound for explicit-link expansion.
    pub link_depth: usize,
    /// Score expanded entities with the raw `sim / source_rank` instead of
    /// `(1 − sim_norm) / source_rank`.
    pub literal_rank_score: bool,
}

impl Default for RankingParams {
    fn default() -> Self {
        RankingParams {
            lambda_sim: 0.5,
            lambda_alpha: 0.5,
            cluster_size_max: 10,
            per_cluster: 1,
            epsilon: 1e-6,
            link_depth: 1,
            literal_rank_score: false,
        }
    }
}

impl RankingParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, l) in [("lambda_sim", self.lambda_sim), ("lambda_alpha", self.lambda_alpha)] {
            if !(0.0..=1.0).contains(&l) {
                return Err(format!("{name} must lie in [0,1]"));
            }
        }
        if self.cluster_size_max == 0 {
            return Err("cluster_size_max must be at least 1".into());
        }
        if self.per_cluster == 0 {
            return Err("per_cluster must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return Err("epsilon must be positive".into());
        }
        if self.link_depth == 0 {
            return Err("link_depth must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedCandidate {
    pub uri: String,
    pub source_entity: String,
    pub source_rank: usize,
    pub cluster_id: usize,
    pub sim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkCandidate {
    pub uri: String,
    pub source_entity: String,
    pub source_rank: usize,
    pub hops: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Baseline,
    Expanded,
    LinkExpanded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub uri: String,
    pub alpha: f64,
    pub origin: Origin,
    pub rank: usize,
    pub source: Option<(String, usize)>,
}

/// Normalized Levenshtein distance over lowercase characters.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let a = a.to_lowercase();
    let b = b.to_lowercase();
    let len = a.chars().count().max(b.chars().count());
    if len == 0 {
        return 0.0;
    }
    strsim::levenshtein(&a, &b) as f64 / len as f64
}

/// φ: distance of the query text to an entity's primary title; 1.0 when the
/// entity has no title.
pub fn string_distance(query_text: &str, primary_title: Option<&str>) -> f64 {
    primary_title.map_or(1.0, |t| normalized_levenshtein(query_text, t))
}

/// `λ·φ(q,e_c)/max(ε, φ(q,e_b)) + (1−λ)·d(e_b,e_c)`; lower is more similar.
pub fn sim(phi_c: f64, phi_b: f64, d: f64, lambda: f64, epsilon: f64) -> f64 {
    lambda * (phi_c / phi_b.max(epsilon)) + (1.0 - lambda) * d
}

/// Fraction of context terms present among the title tokens; `None` when
/// there are no context terms.
pub fn context_score(context_terms: &[String], title_tokens: &BTreeSet<String>) -> Option<f64> {
    if context_terms.is_empty() {
        return None;
    }
    let hits = context_terms.iter().filter(|t| title_tokens.contains(*t)).count();
    Some(hits as f64 / context_terms.len() as f64)
}

/// Min-max normalization; a constant (or single-element) list maps to zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Rank score of a cluster-expanded entity.
pub fn expanded_rank_score(sim_norm: f64, source_rank: usize) -> f64 {
    (1.0 - sim_norm) / source_rank as f64
}

/// `λ·base + (1−λ)·context` when a context score exists, `base` otherwise.
pub fn alpha_score(rank_score: f64, gamma: f64, context: Option<f64>, lambda: f64) -> f64 {
    let base = rank_score * gamma;
    match context {
        Some(c) => lambda * base + (1.0 - lambda) * c,
        None => base,
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EntityInfo {
    primary_title: Option<String>,
    title_tokens: BTreeSet<String>,
    types: Vec<String>,
}

/// Undirected graph of explicit-similarity statements between entities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkGraph {
    edges: BTreeMap<String, BTreeSet<String>>,
}

impl LinkGraph {
    pub fn add_edge(&mut self, a: &str, b: &str) {
        if a == b {
            return;
        }
        self.edges.entry(a.to_string()).or_default().insert(b.to_string());
        self.edges.entry(b.to_string()).or_default().insert(a.to_string());
    }

    pub fn neighbours(&self, uri: &str) -> impl Iterator<Item = &String> {
        self.edges.get(uri).into_iter().flatten()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum::<usize>() / 2
    }
}

/// Per-type feature vectors keyed by uri.
#[derive(Debug, Clone, Default)]
pub struct VectorSpace {
    by_type: HashMap<String, HashMap<String, FeatureVector>>,
}

impl VectorSpace {
    pub fn insert(&mut self, entity_type: &str, vectors: Vec<FeatureVector>) {
        let slot = self.by_type.entry(entity_type.to_string()).or_default();
        for v in vectors {
            slot.insert(v.uri.clone(), v);
        }
    }

    pub fn get(&self, entity_type: &str, uri: &str) -> Option<&FeatureVector> {
        self.by_type.get(entity_type)?.get(uri)
    }
}

/// Everything the online path reads; immutable once built.
pub struct Engine {
    index: InvertedIndex,
    bm25: Bm25fParams,
    entities: HashMap<String, EntityInfo>,
    titles: HashSet<Vec<String>>,
    links: LinkGraph,
    vectors: VectorSpace,
    xmeans: Option<ClusterSpace>,
    spectral: Option<ClusterSpace>,
    affinity: Option<AffinityModel>,
}

impl Engine {
    pub fn new(store: &EntityStore, index: InvertedIndex, bm25: Bm25fParams) -> Self {
        let mut entities = HashMap::with_capacity(store.len());
        let mut titles = HashSet::new();
        let mut links = LinkGraph::default();
        for p in store.iter() {
            for t in &p.title_literals {
                let toks = tokenize(t);
                if !toks.is_empty() {
                    titles.insert(toks);
                }
            }
            for (pred, obj) in &p.object_properties {
                if is_similarity_predicate(pred) {
                    links.add_edge(&p.uri, obj);
                }
            }
            entities.insert(
                p.uri.clone(),
                EntityInfo {
                    primary_title: p.primary_title().map(String::from),
                    title_tokens: p.title_literals.iter().flat_map(|t| tokenize(t)).collect(),
                    types: p.types.iter().cloned().collect(),
                },
            );
        }
        Engine {
            index,
            bm25,
            entities,
            titles,
            links,
            vectors: VectorSpace::default(),
            xmeans: None,
            spectral: None,
            affinity: None,
        }
    }

    pub fn with_vectors(mut self, vectors: VectorSpace) -> Self {
        self.vectors = vectors;
        self
    }

    pub fn with_clusters(mut self, algorithm: Algorithm, clusters: ClusterSpace) -> Self {
        match algorithm {
            Algorithm::Xmeans => self.xmeans = Some(clusters),
            Algorithm::Spectral => self.spectral = Some(clusters),
        }
        self
    }

    pub fn with_affinity(mut self, model: AffinityModel) -> Self {
        self.affinity = Some(model);
        self
    }

    pub fn links(&self) -> &LinkGraph {
        &self.links
    }

    fn clusters(&self, algorithm: Algorithm) -> Option<&ClusterSpace> {
        match algorithm {
            Algorithm::Xmeans => self.xmeans.as_ref(),
            Algorithm::Spectral => self.spectral.as_ref(),
        }
    }

    fn primary_title(&self, uri: &str) -> Option<&str> {
        self.entities.get(uri)?.primary_title.as_deref()
    }

    pub fn analyze(&self, query: &QueryRecord) -> Result<QueryAnalysis, RetrievalError> {
        let tokens = tokenize(&query.text);
        if tokens.is_empty() {
            return Err(RetrievalError::EmptyQuery(query.id.clone()));
        }
        let n = tokens.len();
        let mut span = (0, n);
        let mut matched = false;
        'outer: for len in (1..=n).rev() {
            for start in 0..=n - len {
                if self.titles.contains(&tokens[start..start + len]) {
                    span = (start, start + len);
                    matched = true;
                    break 'outer;
                }
            }
        }
        let entity_span = tokens[span.0..span.1].to_vec();
        let context_terms = if matched {
            tokens[..span.0].iter().chain(&tokens[span.1..]).cloned().collect()
        } else {
            Vec::new()
        };
        let (query_type, type_source) = match &query.annotated_type {
            Some(t) => (t.clone(), TypeSource::Annotation),
            None => (self.infer_type(&entity_span), TypeSource::Inferred),
        };
        Ok(QueryAnalysis {
            entity_span,
            context_terms,
            query_type,
            type_source,
        })
    }

    /// Majority type over the top-10 title-mode results; ties go to the
    /// lexicographically smallest type.
    fn infer_type(&self, span: &[String]) -> String {
        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for hit in self.index.search(span, &self.bm25, FieldMode::TitleOnly, 10) {
            if let Some(info) = self.entities.get(&hit.uri) {
                for t in &info.types {
                    *votes.entry(t).or_default() += 1;
                }
            }
        }
        let mut best: Option<(&str, usize)> = None;
        for (t, c) in votes {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((t, c));
            }
        }
        best.map_or_else(|| UNTYPED.to_string(), |(t, _)| t.to_string())
    }

    pub fn baseline(&self, query: &QueryRecord, field: FieldMode, k: usize) -> Vec<ScoredEntity> {
        self.index.search(&tokenize(&query.text), &self.bm25, field, k)
    }

    /// Cluster expansion of `baseline` (in rank order) over `clusters`.
    pub fn expand(
        &self,
        query_text: &str,
        baseline: &[ScoredEntity],
        clusters: &ClusterSpace,
        params: &RankingParams,
    ) -> Vec<ExpandedCandidate> {
        let in_baseline: HashSet<&str> = baseline.iter().map(|e| e.uri.as_str()).collect();
        let empty = FeatureVector::default();
        let mut best: BTreeMap<String, ExpandedCandidate> = BTreeMap::new();
        for eb in baseline {
            let phi_b = string_distance(query_text, self.primary_title(&eb.uri));
            for &cid in clusters.clusters_of(&eb.uri) {
                let record = clusters.get(cid).expect("cluster ids are dense");
                if record.members.len() > params.cluster_size_max {
                    continue;
                }
                let vb = self.vectors.get(&record.entity_type, &eb.uri).unwrap_or(&empty);
                let mut scored: Vec<(f64, &String)> = record
                    .members
                    .iter()
                    .filter(|m| !in_baseline.contains(m.as_str()))
                    .map(|m| {
                        let phi_c = string_distance(query_text, self.primary_title(m));
                        let vc = self.vectors.get(&record.entity_type, m).unwrap_or(&empty);
                        let d = distance(vb, vc);
                        (sim(phi_c, phi_b, d, params.lambda_sim, params.epsilon), m)
                    })
                    .collect();
                scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
                for (s, m) in scored.into_iter().take(params.per_cluster) {
                    let candidate = ExpandedCandidate {
                        uri: m.clone(),
                        source_entity: eb.uri.clone(),
                        source_rank: eb.rank,
                        cluster_id: cid,
                        sim: s,
                    };
                    match best.get(m) {
                        Some(prev)
                            if prev.sim < s || (prev.sim == s && prev.source_rank <= eb.rank) => {}
                        _ => {
                            best.insert(m.clone(), candidate);
                        }
                    }
                }
            }
        }
        let mut out: Vec<ExpandedCandidate> = best.into_values().collect();
        out.sort_by(|a, b| {
            a.sim
                .total_cmp(&b.sim)
                .then(a.source_rank.cmp(&b.source_rank))
                .then_with(|| a.uri.cmp(&b.uri))
        });
        out
    }

    /// Entities reachable from `normalized` baseline entities over
    /// explicit-similarity edges within `depth` hops, scored `score / hops`.
    pub fn link_expand(&self, normalized: &[ScoredEntity], depth: usize) -> Vec<LinkCandidate> {
        let in_baseline: HashSet<&str> = normalized.iter().map(|e| e.uri.as_str()).collect();
        let mut best: BTreeMap<String, LinkCandidate> = BTreeMap::new();
        for eb in normalized {
            let mut seen: HashSet<&str> = HashSet::from([eb.uri.as_str()]);
            let mut frontier: Vec<&str> = vec![&eb.uri];
            for hops in 1..=depth {
                let mut next = Vec::new();
                for u in frontier {
                    for v in self.links.neighbours(u) {
                        if seen.insert(v) {
                            next.push(v.as_str());
                        }
                    }
                }
                for &v in &next {
                    if in_baseline.contains(v) {
                        continue;
                    }
                    let score = eb.score / hops as f64;
                    let better = best.get(v).is_none_or(|p| {
                        score > p.score || (score == p.score && eb.rank < p.source_rank)
                    });
                    if better {
                        best.insert(
                            v.to_string(),
                            LinkCandidate {
                                uri: v.to_string(),
                                source_entity: eb.uri.clone(),
                                source_rank: eb.rank,
                                hops,
                                score,
                            },
                        );
                    }
                }
                frontier = next;
            }
        }
        best.into_values().collect()
    }

    fn gamma(&self, uri: &str, query_type: &str) -> f64 {
        let Some(model) = &self.affinity else {
            return 1.0;
        };
        match self.entities.get(uri) {
            Some(info) if !info.types.is_empty() => model.entity_gamma(&info.types, query_type),
            _ => model.gamma(UNTYPED, query_type),
        }
    }

    pub fn final_rank(
        &self,
        query: &QueryRecord,
        mode: Mode,
        field: FieldMode,
        k: usize,
        params: &RankingParams,
    ) -> Result<Vec<RankedResult>, RetrievalError> {
        let analysis = self.analyze(query)?;
        let baseline = self.baseline(query, field, k);
        let Ok(normalized) = normalize_scores(&baseline) else {
            return Ok(Vec::new());
        };

        let mut pool: Vec<PoolEntry> = normalized
            .iter()
            .map(|e| (e.uri.clone(), e.score, Origin::Baseline, None))
            .collect();
        match mode {
            Mode::B => {}
            Mode::S1 => {
                for c in self.link_expand(&normalized, params.link_depth) {
                    pool.push((c.uri, c.score, Origin::LinkExpanded, Some((c.source_entity, c.source_rank))));
                }
            }
            Mode::XM | Mode::SP => {
                let algorithm = mode.cluster_algorithm().expect("cluster mode");
                let clusters = self
                    .clusters(algorithm)
                    .ok_or(RetrievalError::MissingClusters(mode, algorithm))?;
                let candidates = self.expand(&query.text, &baseline, clusters, params);
                let sims: Vec<f64> = candidates.iter().map(|c| c.sim).collect();
                let norm = min_max(&sims);
                for (c, s) in candidates.into_iter().zip(norm) {
                    let score = if params.literal_rank_score {
                        c.sim / c.source_rank as f64
                    } else {
                        expanded_rank_score(s, c.source_rank)
                    };
                    pool.push((c.uri, score, Origin::Expanded, Some((c.source_entity, c.source_rank))));
                }
            }
        }

        let empty = BTreeSet::new();
        let mut results: Vec<RankedResult> = pool
            .into_iter()
            .map(|(uri, rank_score, origin, source)| {
                let gamma = self.gamma(&uri, &analysis.query_type);
                let title_tokens = self.entities.get(&uri).map_or(&empty, |i| &i.title_tokens);
                let context = context_score(&analysis.context_terms, title_tokens);
                RankedResult {
                    alpha: alpha_score(rank_score, gamma, context, params.lambda_alpha),
                    uri,
                    origin,
                    rank: 0,
                    source,
                }
            })
            .collect();
        results.sort_by(|a, b| b.alpha.total_cmp(&a.alpha).then_with(|| a.uri.cmp(&b.uri)));
        results.truncate(k);
        for (i, r) in results.iter_mut().enumerate() {
            r.rank = i + 1;
        }
        Ok(results)
    }
}

/// `(uri, rank_score, origin, source)` before γ and context are applied.
type PoolEntry = (String, f64, Origin, Option<(String, usize)>);

/// Run tag such as `SP_t`, optionally suffixed with a config hash.
pub fn run_tag(mode: Mode, field: FieldMode, config_hash: Option<&str>) -> String {
    match config_hash {
        Some(h) => format!("{}_{}.{}", mode, field.tag(), h),
        None => format!("{}_{}", mode, field.tag()),
    }
}

/// TREC run lines: `qid Q0 uri rank score tag`.
pub fn format_run(query_id: &str, results: &[RankedResult], tag: &str) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!("{query_id} Q0 {} {} {:.12} {tag}\n", r.uri, r.rank, r.alpha));
    }
    out
}
