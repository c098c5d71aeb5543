//! Query type affinity: the empirical distribution `p(t_e | t_q)` of relevant
//! entity types given the query type, and the γ score built on it.
//!
//! ```text
//! p(t_e | t_q) = (count(t_e, t_q) + α) / (Σ_t count(t, t_q) + α·|T_e|)
//! γ(t_e, t_q)  = p(t_e | t_q) / max(ε, Σ_{t_q' ≠ t_q} (1 − p(t_e | t_q')))
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EntityStore;

const GAMMA_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AffinityError {
    #[error("no training judgments")]
    EmptyTrainingSet,
    #[error("smoothing alpha must be non-negative and finite, got {0}")]
    BadAlpha(f64),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// One query's relevant entities, reduced to their types (one entry per
/// declared type per relevant entity).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    pub query_id: String,
    pub query_type: String,
    pub relevant_entity_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffinityModel {
    pub alpha: f64,
    pub query_types: Vec<String>,
    pub entity_types: Vec<String>,
    /// `rows[q][e] = p(entity_types[e] | query_types[q])`.
    pub rows: Vec<Vec<f64>>,
    /// Probability an entity type never seen in training receives, per row.
    pub unseen: Vec<f64>,
}

impl AffinityModel {
    pub fn train(judgments: &[Judgment], alpha: f64) -> Result<Self, AffinityError> {
        if judgments.is_empty() {
            return Err(AffinityError::EmptyTrainingSet);
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(AffinityError::BadAlpha(alpha));
        }
        let mut counts: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
        let mut entity_types: BTreeSet<&str> = BTreeSet::new();
        for j in judgments {
            let row = counts.entry(&j.query_type).or_default();
            for t in &j.relevant_entity_types {
                *row.entry(t).or_default() += 1.0;
                entity_types.insert(t);
            }
        }
        let width = entity_types.len() as f64;
        let mut rows = Vec::with_capacity(counts.len());
        let mut unseen = Vec::with_capacity(counts.len());
        for row in counts.values() {
            let total: f64 = row.values().sum();
            let denom = total + alpha * width;
            if denom > 0.0 {
                rows.push(
                    entity_types
                        .iter()
                        .map(|t| (row.get(t).copied().unwrap_or(0.0) + alpha) / denom)
                        .collect(),
                );
                unseen.push(alpha / denom);
            } else {
                // no evidence and no smoothing: spread uniformly
                let uniform = if width > 0.0 { 1.0 / width } else { 0.0 };
                rows.push(vec![uniform; entity_types.len()]);
                unseen.push(0.0);
            }
        }
        Ok(AffinityModel {
            alpha,
            query_types: counts.keys().map(|s| s.to_string()).collect(),
            entity_types: entity_types.into_iter().map(String::from).collect(),
            rows,
            unseen,
        })
    }

    fn query_row(&self, query_type: &str) -> Option<usize> {
        self.query_types.binary_search_by(|q| q.as_str().cmp(query_type)).ok()
    }

    fn prob_in_row(&self, row: usize, entity_type: &str) -> f64 {
        match self.entity_types.binary_search_by(|e| e.as_str().cmp(entity_type)) {
            Ok(col) => self.rows[row][col],
            Err(_) => self.unseen[row],
        }
    }

    /// `p(t_e | t_q)`, or `None` for a query type the model has not seen.
    pub fn probability(&self, entity_type: &str, query_type: &str) -> Option<f64> {
        self.query_row(query_type)
            .map(|r| self.prob_in_row(r, entity_type))
    }

    pub fn gamma(&self, entity_type: &str, query_type: &str) -> f64 {
        let Some(row) = self.query_row(query_type) else {
            return if self.entity_types.is_empty() {
                1.0
            } else {
                1.0 / self.entity_types.len() as f64
            };
        };
        let p = self.prob_in_row(row, entity_type);
        if self.query_types.len() == 1 {
            return p;
        }
        let rest: f64 = (0..self.query_types.len())
            .filter(|&r| r != row)
            .map(|r| 1.0 - self.prob_in_row(r, entity_type))
            .sum();
        p / rest.max(GAMMA_EPSILON)
    }

    /// Maximum γ over an entity's declared types.
    pub fn entity_gamma<'a>(&self, types: impl IntoIterator<Item = &'a String>, query_type: &str) -> f64 {
        types
            .into_iter()
            .map(|t| self.gamma(t, query_type))
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Reads `query_id \t query_type \t entity_uri \t grade` lines and keeps
/// entities graded at least `min_grade`, expanded to their types via the
/// store. Entities missing from the store are skipped; their count is
/// returned alongside.
pub fn judgments_from_tsv(
    text: &str,
    store: &EntityStore,
    min_grade: u8,
) -> Result<(Vec<Judgment>, usize), AffinityError> {
    let mut by_query: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    let mut missing = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(AffinityError::Parse {
                line: i + 1,
                reason: format!("expected 4 tab-separated fields, found {}", f.len()),
            });
        }
        let grade: u8 = f[3].trim().parse().map_err(|_| AffinityError::Parse {
            line: i + 1,
            reason: format!("bad grade {:?}", f[3]),
        })?;
        let entry = by_query
            .entry((f[0].to_string(), f[1].to_string()))
            .or_default();
        if grade < min_grade {
            continue;
        }
        match store.get(f[2]) {
            Ok(p) => entry.extend(p.types),
            Err(_) => missing += 1,
        }
    }
    let judgments = by_query
        .into_iter()
        .map(|((query_id, query_type), relevant_entity_types)| Judgment {
            query_id,
            query_type,
            relevant_entity_types,
        })
        .collect();
    Ok((judgments, missing))
}
