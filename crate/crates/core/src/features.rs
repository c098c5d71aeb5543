//! Entity feature vectors: tf-idf weighted unigrams and bigrams plus binary
//! structural features, one vector space per entity type.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::EntityProfile;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Namespace {
    Unigram,
    Bigram,
    Structural,
}

impl Namespace {
    fn prefix(self) -> char {
        match self {
            Namespace::Unigram => 'U',
            Namespace::Bigram => 'B',
            Namespace::Structural => 'S',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureId {
    pub namespace: Namespace,
    pub key: String,
}

impl FeatureId {
    pub fn unigram(term: &str) -> Self {
        FeatureId {
            namespace: Namespace::Unigram,
            key: term.to_string(),
        }
    }

    pub fn bigram(first: &str, second: &str) -> Self {
        FeatureId {
            namespace: Namespace::Bigram,
            key: format!("{first} {second}"),
        }
    }

    pub fn structural(predicate: &str, object: &str) -> Self {
        FeatureId {
            namespace: Namespace::Structural,
            key: format!("{predicate}|{object}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (ns, key) = s.split_once(':')?;
        let namespace = match ns {
            "U" => Namespace::Unigram,
            "B" => Namespace::Bigram,
            "S" => Namespace::Structural,
            _ => return None,
        };
        if key.is_empty() {
            return None;
        }
        Some(FeatureId {
            namespace,
            key: key.to_string(),
        })
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.namespace.prefix(), self.key)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub uri: String,
    pub entries: BTreeMap<FeatureId, f64>,
}

impl FeatureVector {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &FeatureId> {
        self.entries.keys()
    }
}

/// Builds vectors for entities sharing one type. Unigram and bigram weights
/// are `tf · ln(N_T / df_T)` over that type; bigrams never cross literal
/// boundaries. Zero-weight features are dropped.
pub fn build_vectors(entities: &[EntityProfile]) -> Vec<FeatureVector> {
    let n = entities.len() as f64;
    let mut term_freqs: Vec<HashMap<FeatureId, u32>> = Vec::with_capacity(entities.len());
    let mut df: HashMap<FeatureId, u32> = HashMap::new();
    for e in entities {
        let mut tf: HashMap<FeatureId, u32> = HashMap::new();
        for literal in &e.body_literals {
            let tokens = tokenize(literal);
            for t in &tokens {
                *tf.entry(FeatureId::unigram(t)).or_default() += 1;
            }
            for pair in tokens.windows(2) {
                *tf.entry(FeatureId::bigram(&pair[0], &pair[1])).or_default() += 1;
            }
        }
        for f in tf.keys() {
            *df.entry(f.clone()).or_default() += 1;
        }
        term_freqs.push(tf);
    }

    entities
        .iter()
        .zip(term_freqs)
        .map(|(e, tf)| {
            let mut entries: BTreeMap<FeatureId, f64> = tf
                .into_iter()
                .filter_map(|(f, count)| {
                    let w = count as f64 * (n / df[&f] as f64).ln();
                    (w > 0.0).then_some((f, w))
                })
                .collect();
            for (p, o) in &e.object_properties {
                entries.insert(FeatureId::structural(p, o), 1.0);
            }
            FeatureVector {
                uri: e.uri.clone(),
                entries,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneParams {
    pub min_entity_freq: usize,
    pub max_df_fraction: f64,
}

impl PruneParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.max_df_fraction) {
            return Err("max_df_fraction must lie in [0,1]".into());
        }
        Ok(())
    }
}

impl Default for PruneParams {
    fn default() -> Self {
        PruneParams {
            min_entity_freq: 2,
            max_df_fraction: 0.5,
        }
    }
}

/// Removes features carried by fewer than `min_entity_freq` entities or by
/// more than `max_df_fraction` of them. The same rule applies to every
/// namespace. Entities may come out empty; they are kept.
pub fn prune(vectors: Vec<FeatureVector>, params: &PruneParams) -> Vec<FeatureVector> {
    let n = vectors.len() as f64;
    let mut ef: HashMap<FeatureId, usize> = HashMap::new();
    for v in &vectors {
        for f in v.keys() {
            *ef.entry(f.clone()).or_default() += 1;
        }
    }
    let keep = |f: &FeatureId| {
        let c = ef[f];
        c >= params.min_entity_freq && (c as f64) <= params.max_df_fraction * n
    };
    vectors
        .into_iter()
        .map(|mut v| {
            v.entries.retain(|f, _| keep(f));
            v
        })
        .collect()
}

/// Euclidean distance over the union of feature ids; missing entries are 0.
pub fn distance(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let mut sum = 0.0;
    let mut ia = a.entries.iter().peekable();
    let mut ib = b.entries.iter().peekable();
    loop {
        let diff = match (ia.peek(), ib.peek()) {
            (None, None) => break,
            (Some((_, &wa)), None) => {
                ia.next();
                wa
            }
            (None, Some((_, &wb))) => {
                ib.next();
                wb
            }
            (Some((fa, &wa)), Some((fb, &wb))) => match fa.cmp(fb) {
                std::cmp::Ordering::Less => {
                    ia.next();
                    wa
                }
                std::cmp::Ordering::Greater => {
                    ib.next();
                    wb
                }
                std::cmp::Ordering::Equal => {
                    ia.next();
                    ib.next();
                    wa - wb
                }
            },
        };
        sum += diff * diff;
    }
    sum.sqrt()
}

/// Projects sparse vectors onto the dense space spanned by their union of
/// feature ids (sorted).
pub fn densify(vectors: &[&FeatureVector]) -> Vec<Vec<f64>> {
    let dims: BTreeSet<&FeatureId> = vectors.iter().flat_map(|v| v.keys()).collect();
    let pos: HashMap<&FeatureId, usize> = dims.iter().enumerate().map(|(i, f)| (*f, i)).collect();
    vectors
        .iter()
        .map(|v| {
            let mut row = vec![0.0; dims.len()];
            for (f, w) in &v.entries {
                row[pos[f]] = *w;
            }
            row
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum VectorFileError {
    #[error("malformed vector record on line {0}")]
    Malformed(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Vectors of one type, one record per line:
/// `uri \t count \t feature \t weight ...` with features in sorted order and
/// weights as 16-digit hex of the IEEE-754 bits (fixed width, exact).
pub fn write_vectors(path: &Path, vectors: &[FeatureVector]) -> io::Result<()> {
    let mut out = String::new();
    for v in vectors {
        out.push_str(&v.uri);
        out.push('\t');
        out.push_str(&v.entries.len().to_string());
        for (f, w) in &v.entries {
            out.push('\t');
            out.push_str(&f.to_string());
            out.push('\t');
            out.push_str(&format!("{:016x}", w.to_bits()));
        }
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn read_vectors(path: &Path) -> Result<Vec<FeatureVector>, VectorFileError> {
    let text = fs::read_to_string(path)?;
    let mut vectors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = || VectorFileError::Malformed(i + 1);
        let mut parts = line.split('\t');
        let uri = parts.next().ok_or_else(bad)?;
        let count: usize = parts.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let f = parts.next().and_then(FeatureId::parse).ok_or_else(bad)?;
            let w = parts
                .next()
                .and_then(|h| u64::from_str_radix(h, 16).ok())
                .map(f64::from_bits)
                .ok_or_else(bad)?;
            entries.insert(f, w);
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        vectors.push(FeatureVector {
            uri: uri.to_string(),
            entries,
        });
    }
    Ok(vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(uri: &str, literals: &[&str], props: &[(&str, &str)]) -> EntityProfile {
        EntityProfile {
            uri: uri.into(),
            body_literals: literals.iter().map(|s| s.to_string()).collect(),
            object_properties: props
                .iter()
                .map(|(p, o)| (p.to_string(), o.to_string()))
                .collect(),
            ..Default::default()
        }
    }

    fn vec_of(pairs: &[(&str, f64)]) -> FeatureVector {
        FeatureVector {
            uri: "x".into(),
            entries: pairs.iter().map(|(k, w)| (FeatureId::unigram(k), *w)).collect(),
        }
    }

    #[test]
    fn shared_term_has_zero_idf() {
        let v = build_vectors(&[entity("a", &["x y"], &[]), entity("b", &["x z"], &[])]);
        assert!(!v[0].entries.contains_key(&FeatureId::unigram("x")));
        let w = v[0].entries[&FeatureId::unigram("y")];
        assert!((w - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bigrams_stay_within_literals() {
        let v = build_vectors(&[
            entity("a", &["Harry Potter", "movie"], &[]),
            entity("b", &["other"], &[]),
        ]);
        assert!(v[0].entries.contains_key(&FeatureId::bigram("harry", "potter")));
        assert!(!v[0].entries.contains_key(&FeatureId::bigram("potter", "movie")));
    }

    #[test]
    fn structural_features_are_binary() {
        let v = build_vectors(&[entity("a", &[], &[("ex:spouse", "e2")])]);
        let f = FeatureId::structural("ex:spouse", "e2");
        assert_eq!(f.to_string(), "S:ex:spouse|e2");
        assert_eq!(v[0].entries[&f], 1.0);
    }

    #[test]
    fn tf_multiplies_idf() {
        let v = build_vectors(&[entity("a", &["k k k"], &[]), entity("b", &["m"], &[])]);
        assert!((v[0].entries[&FeatureId::unigram("k")] - 3.0 * 2f64.ln()).abs() < 1e-15);
    }

    fn ten_vectors_with(feature_counts: &[(&str, usize)]) -> Vec<FeatureVector> {
        (0..10)
            .map(|i| FeatureVector {
                uri: format!("e{i}"),
                entries: feature_counts
                    .iter()
                    .filter(|(_, c)| i < *c)
                    .map(|(k, _)| (FeatureId::unigram(k), 1.0))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn pruning_thresholds() {
        let v = ten_vectors_with(&[("rare", 1), ("common", 10), ("mid", 4), ("half", 5), ("over", 6)]);
        let pruned = prune(v, &PruneParams::default());
        let kept: BTreeSet<String> = pruned.iter().flat_map(|v| v.keys().map(|f| f.key.clone())).collect();
        assert_eq!(kept, BTreeSet::from(["mid".to_string(), "half".to_string()]));
        assert_eq!(pruned.len(), 10);
        assert!(pruned[9].is_empty());
    }

    #[test]
    fn distance_examples() {
        let a = vec_of(&[("a", 1.0), ("b", 2.0)]);
        let b = vec_of(&[("a", 1.0)]);
        assert_eq!(distance(&a, &b), 2.0);
        assert_eq!(distance(&a, &a), 0.0);
        assert_eq!(distance(&b, &vec_of(&[("c", 3.0)])), 10f64.sqrt());
        assert_eq!(distance(&FeatureVector::default(), &FeatureVector::default()), 0.0);
    }

    #[test]
    fn densify_matches_distance() {
        let a = vec_of(&[("a", 1.0), ("c", 2.5)]);
        let b = vec_of(&[("b", -1.0), ("c", 0.5)]);
        let rows = densify(&[&a, &b]);
        assert_eq!(rows[0], vec![1.0, 0.0, 2.5]);
        let d: f64 = rows[0].iter().zip(&rows[1]).map(|(x, y)| (x - y).powi(2)).sum();
        assert!((d.sqrt() - distance(&a, &b)).abs() < 1e-15);
    }

    #[test]
    fn vector_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.tsv");
        let mut v = build_vectors(&[
            entity("a", &["alpha beta", "gamma"], &[("http://ex/p", "http://ex/o")]),
            entity("b", &["delta"], &[]),
        ]);
        v.push(FeatureVector {
            uri: "empty".into(),
            entries: BTreeMap::new(),
        });
        write_vectors(&path, &v).unwrap();
        assert_eq!(read_vectors(&path).unwrap(), v);
    }
}
