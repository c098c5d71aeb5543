//! Fielded inverted index with BM25F scoring.
//!
//! ```text
//! score(q, d) = Σ_t idf(t) · s(t, d) / (k1 + s(t, d))
//! s(t, d)     = Σ_f w_f · tf(t, f, d) / (1 + b_f · (len_f(d) / avglen_f − 1))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! Fields are the entity title literals and the full body (all literals).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EntityStore;

pub const POSTINGS_FILE: &str = "postings.dat";
pub const DOCLENS_FILE: &str = "doclens.dat";
pub const DICTIONARY_FILE: &str = "dictionary.dat";
pub const STATS_FILE: &str = "stats.json";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("unknown entity uri: {0}")]
    UnknownUri(String),
    #[error("cannot normalize an empty result list")]
    EmptyList,
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Lowercases and splits on every non-alphanumeric codepoint.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn tokenize_all<'a>(texts: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    texts.into_iter().flat_map(|t| tokenize(t)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldedDocument {
    pub uri: String,
    pub title_tokens: Vec<String>,
    pub body_tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bm25fParams {
    pub k1: f64,
    pub b_title: f64,
    pub b_body: f64,
    pub w_title: f64,
    pub w_body: f64,
}

impl Default for Bm25fParams {
    fn default() -> Self {
        Bm25fParams {
            k1: 1.2,
            b_title: 0.75,
            b_body: 0.75,
            w_title: 2.0,
            w_body: 1.0,
        }
    }
}

impl Bm25fParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.k1 > 0.0) {
            return Err("k1 must be positive".into());
        }
        for (name, b) in [("b_title", self.b_title), ("b_body", self.b_body)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(format!("{name} must lie in [0,1]"));
            }
        }
        if self.w_title < 0.0 || self.w_body < 0.0 || (self.w_title == 0.0 && self.w_body == 0.0)
        {
            return Err("field weights must be non-negative with at least one positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    TitleOnly,
    BodyOnly,
    Both,
}

impl FieldMode {
    /// Short tag used in run names (`B_t`, `SP_b`, ...).
    pub fn tag(self) -> &'static str {
        match self {
            FieldMode::TitleOnly => "t",
            FieldMode::BodyOnly => "b",
            FieldMode::Both => "tb",
        }
    }

    fn weights(self, p: &Bm25fParams) -> (f64, f64) {
        match self {
            FieldMode::TitleOnly => (p.w_title, 0.0),
            FieldMode::BodyOnly => (0.0, p.w_body),
            FieldMode::Both => (p.w_title, p.w_body),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub uri: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: u32,
    tf_title: u32,
    tf_body: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub n: usize,
    pub avg_title_len: f64,
    pub avg_body_len: f64,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    uris: Vec<String>,
    title_len: Vec<u32>,
    body_len: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    stats: IndexStats,
}

impl InvertedIndex {
    pub fn from_documents(mut docs: Vec<FieldedDocument>) -> Self {
        docs.sort_by(|a, b| a.uri.cmp(&b.uri));
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut uris = Vec::with_capacity(docs.len());
        let mut title_len = Vec::with_capacity(docs.len());
        let mut body_len = Vec::with_capacity(docs.len());
        for (i, d) in docs.into_iter().enumerate() {
            let mut tfs: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
            for t in &d.title_tokens {
                tfs.entry(t).or_default().0 += 1;
            }
            for t in &d.body_tokens {
                tfs.entry(t).or_default().1 += 1;
            }
            for (term, (tf_title, tf_body)) in tfs {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: i as u32,
                    tf_title,
                    tf_body,
                });
            }
            title_len.push(d.title_tokens.len() as u32);
            body_len.push(d.body_tokens.len() as u32);
            uris.push(d.uri);
        }
        let n = uris.len();
        let mean = |v: &[u32]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
            }
        };
        let stats = IndexStats {
            n,
            avg_title_len: mean(&title_len),
            avg_body_len: mean(&body_len),
        };
        InvertedIndex {
            uris,
            title_len,
            body_len,
            postings,
            stats,
        }
    }

    pub fn build(store: &EntityStore) -> Self {
        let docs = store
            .iter()
            .map(|p| FieldedDocument {
                title_tokens: tokenize_all(&p.title_literals),
                body_tokens: tokenize_all(&p.body_literals),
                uri: p.uri,
            })
            .collect();
        Self::from_documents(docs)
    }

    pub fn stats(&self) -> &IndexStats {
        &self.stats
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn field_lengths(&self, uri: &str) -> Option<(u32, u32)> {
        let d = self.doc_id(uri)?;
        Some((self.title_len[d], self.body_len[d]))
    }

    fn doc_id(&self, uri: &str) -> Option<usize> {
        self.uris.binary_search_by(|u| u.as_str().cmp(uri)).ok()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.stats.n as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn length_norm(b: f64, len: u32, avg: f64) -> f64 {
        let ratio = if avg > 0.0 { len as f64 / avg } else { 1.0 };
        1.0 + b * (ratio - 1.0)
    }

    fn term_weight(&self, p: &Posting, params: &Bm25fParams, mode: FieldMode) -> f64 {
        let (w_title, w_body) = mode.weights(params);
        let d = p.doc as usize;
        let mut s = 0.0;
        if w_title > 0.0 && p.tf_title > 0 {
            s += w_title * p.tf_title as f64
                / Self::length_norm(params.b_title, self.title_len[d], self.stats.avg_title_len);
        }
        if w_body > 0.0 && p.tf_body > 0 {
            s += w_body * p.tf_body as f64
                / Self::length_norm(params.b_body, self.body_len[d], self.stats.avg_body_len);
        }
        s
    }

    fn term_contribution(&self, term: &str, p: &Posting, params: &Bm25fParams, mode: FieldMode) -> f64 {
        let s = self.term_weight(p, params, mode);
        if s == 0.0 {
            0.0
        } else {
            self.idf(term) * s / (params.k1 + s)
        }
    }

    pub fn bm25f_score(
        &self,
        query_tokens: &[String],
        uri: &str,
        params: &Bm25fParams,
        mode: FieldMode,
    ) -> Result<f64, IndexError> {
        let doc = self
            .doc_id(uri)
            .ok_or_else(|| IndexError::UnknownUri(uri.to_string()))? as u32;
        let mut score = 0.0;
        for t in query_tokens {
            let Some(list) = self.postings.get(t) else {
                continue;
            };
            if let Ok(i) = list.binary_search_by_key(&doc, |p| p.doc) {
                score += self.term_contribution(t, &list[i], params, mode);
            }
        }
        Ok(score)
    }

    /// Top-k entities by BM25F; zero scores are dropped and ties go to the
    /// lexicographically smaller uri.
    pub fn search(
        &self,
        query_tokens: &[String],
        params: &Bm25fParams,
        mode: FieldMode,
        k: usize,
    ) -> Vec<ScoredEntity> {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for t in query_tokens {
            let Some(list) = self.postings.get(t) else {
                continue;
            };
            for p in list {
                let c = self.term_contribution(t, p, params, mode);
                if c > 0.0 {
                    *acc.entry(p.doc).or_default() += c;
                }
            }
        }
        let mut hits: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, s)| s > 0.0).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits.into_iter()
            .enumerate()
            .map(|(i, (doc, score))| ScoredEntity {
                uri: self.uris[doc as usize].clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir)?;
        let mut postings = String::new();
        let mut dictionary = String::new();
        for (term, list) in &self.postings {
            writeln!(dictionary, "{term}\t{}\t{}", list.len(), postings.len()).unwrap();
            let line: Vec<String> = list
                .iter()
                .map(|p| format!("{}:{}:{}", p.doc, p.tf_title, p.tf_body))
                .collect();
            postings.push_str(&line.join(" "));
            postings.push('\n');
        }
        let mut doclens = String::new();
        for (i, uri) in self.uris.iter().enumerate() {
            writeln!(doclens, "{uri}\t{}\t{}", self.title_len[i], self.body_len[i]).unwrap();
        }
        fs::write(dir.join(POSTINGS_FILE), postings)?;
        fs::write(dir.join(DICTIONARY_FILE), dictionary)?;
        fs::write(dir.join(DOCLENS_FILE), doclens)?;
        let mut stats = serde_json::to_string_pretty(&self.stats)?;
        stats.push('\n');
        fs::write(dir.join(STATS_FILE), stats)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let corrupt = |m: &str| IndexError::Corrupt(m.to_string());
        let stats: IndexStats = serde_json::from_str(&fs::read_to_string(dir.join(STATS_FILE))?)?;
        let mut uris = Vec::new();
        let mut title_len = Vec::new();
        let mut body_len = Vec::new();
        for line in fs::read_to_string(dir.join(DOCLENS_FILE))?.lines() {
            let mut parts = line.split('\t');
            let (Some(u), Some(t), Some(b)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(corrupt("doclens line"));
            };
            uris.push(u.to_string());
            title_len.push(t.parse().map_err(|_| corrupt("title length"))?);
            body_len.push(b.parse().map_err(|_| corrupt("body length"))?);
        }
        let dictionary = fs::read_to_string(dir.join(DICTIONARY_FILE))?;
        let postings_text = fs::read_to_string(dir.join(POSTINGS_FILE))?;
        let mut postings = BTreeMap::new();
        for (entry, plist) in dictionary.lines().zip(postings_text.lines()) {
            let mut parts = entry.split('\t');
            let term = parts.next().ok_or_else(|| corrupt("dictionary term"))?;
            let df: usize = parts
                .next()
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| corrupt("dictionary df"))?;
            let mut list = Vec::with_capacity(df);
            for p in plist.split(' ') {
                let mut f = p.split(':').map(|x| x.parse::<u32>());
                match (f.next(), f.next(), f.next()) {
                    (Some(Ok(doc)), Some(Ok(tf_title)), Some(Ok(tf_body))) => list.push(Posting {
                        doc,
                        tf_title,
                        tf_body,
                    }),
                    _ => return Err(corrupt("posting")),
                }
            }
            if list.len() != df {
                return Err(corrupt("df mismatch"));
            }
            postings.insert(term.to_string(), list);
        }
        if stats.n != uris.len() {
            return Err(corrupt("document count mismatch"));
        }
        Ok(InvertedIndex {
            uris,
            title_len,
            body_len,
            postings,
            stats,
        })
    }
}

/// Divides every score by the list maximum, so the top entity gets 1.0.
pub fn normalize_scores(results: &[ScoredEntity]) -> Result<Vec<ScoredEntity>, IndexError> {
    let max = results
        .iter()
        .map(|r| r.score)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
        .ok_or(IndexError::EmptyList)?;
    Ok(results
        .iter()
        .map(|r| ScoredEntity {
            score: if max > 0.0 { r.score / max } else { 0.0 },
            ..r.clone()
        })
        .collect())
}
