//! Deterministic synthetic corpus with planted entity clusters.
//!
//! Every cluster owns a private token pool, two private structural
//! properties and a two-token name. Clusters are arranged in groups that
//! share a weaker group pool and property, so LSH tends to put a whole group
//! in one bucket and the clustering step has to separate the clusters.
//! Only the visible members of a cluster carry the name in their title; the
//! query for the cluster is the name.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vocab::{OWL_SAME_AS, RDFS_LABEL};

const NS: &str = "http://synth.example/";
const RDF_TYPE: &str = crate::rdf::RDF_TYPE;
pub const DESCRIPTION: &str = "http://synth.example/prop/description";

pub const CORPUS_FILE: &str = "corpus.nq";
pub const QUERIES_FILE: &str = "queries.tsv";
pub const QRELS_FILE: &str = "qrels.txt";
pub const LABELS_FILE: &str = "labels.tsv";
pub const TRAINING_FILE: &str = "training.tsv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_types: usize,
    pub clusters_per_type: usize,
    pub entities_per_cluster: usize,
    pub vocab_size: usize,
    /// Probability that a description token is replaced by a random word and
    /// that a structural property is dropped.
    pub near_duplicate_noise: f64,
    /// Fraction of each cluster whose title omits the cluster name.
    pub hidden_fraction: f64,
    /// Clusters per group sharing the group pool.
    pub group_size: usize,
    /// Words in each cluster pool.
    pub pool_size: usize,
    /// Words in each group pool.
    pub group_pool_size: usize,
    /// Fraction of hidden entities linked by `owl:sameAs` from a visible
    /// member of their cluster.
    pub link_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_types: 2,
            clusters_per_type: 12,
            entities_per_cluster: 3,
            vocab_size: 2000,
            near_duplicate_noise: 0.1,
            hidden_fraction: 0.7,
            group_size: 3,
            pool_size: 8,
            group_pool_size: 12,
            link_fraction: 0.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("num_types", self.num_types),
            ("clusters_per_type", self.clusters_per_type),
            ("entities_per_cluster", self.entities_per_cluster),
            ("vocab_size", self.vocab_size),
            ("group_size", self.group_size),
            ("pool_size", self.pool_size),
            ("group_pool_size", self.group_pool_size),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        for (name, p) in [
            ("near_duplicate_noise", self.near_duplicate_noise),
            ("hidden_fraction", self.hidden_fraction),
            ("link_fraction", self.link_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0,1]"));
            }
        }
        Ok(())
    }

    pub fn visible_per_cluster(&self) -> usize {
        let v = ((1.0 - self.hidden_fraction) * self.entities_per_cluster as f64).round() as usize;
        v.clamp(1, self.entities_per_cluster)
    }

    pub fn entity_count(&self) -> usize {
        self.num_types * self.clusters_per_type * self.entities_per_cluster
    }
}

/// Bijective spelling of `i` as two or more consonant-vowel syllables.
fn spell(i: usize, consonants: &[u8], vowels: &[u8]) -> String {
    let base = consonants.len() * vowels.len();
    let mut i = i + base;
    let mut out = String::new();
    loop {
        let s = i % base;
        out.push(consonants[s / vowels.len()] as char);
        out.push(vowels[s % vowels.len()] as char);
        if i < base {
            break;
        }
        i = i / base - 1;
    }
    out
}

/// Vocabulary word; never collides with a name token.
pub fn word(i: usize) -> String {
    spell(i, b"bdfgklmnprstv", b"aeiou")
}

/// Name token; uses a disjoint consonant set from `word`.
pub fn name_token(i: usize) -> String {
    spell(i, b"hjwyz", b"aeiou")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn escape_literal(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn type_iri(t: usize) -> String {
    format!("{NS}type/T{t}")
}

pub fn entity_iri(t: usize, c: usize, e: usize) -> String {
    format!("{NS}entity/t{t}/c{c}/e{e}")
}

pub fn cluster_label(t: usize, c: usize) -> String {
    format!("t{t}c{c}")
}

pub fn query_id(t: usize, c: usize) -> String {
    format!("q-t{t}-c{c}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub nquads: String,
    pub queries: String,
    pub qrels: String,
    /// `uri \t cluster_label`.
    pub labels: String,
    /// `query_id \t query_type \t uri \t grade` for the affinity model.
    pub training: String,
}

impl SynthCorpus {
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CORPUS_FILE), &self.nquads)?;
        fs::write(dir.join(QUERIES_FILE), &self.queries)?;
        fs::write(dir.join(QRELS_FILE), &self.qrels)?;
        fs::write(dir.join(LABELS_FILE), &self.labels)?;
        fs::write(dir.join(TRAINING_FILE), &self.training)
    }
}

struct Cluster {
    name: [String; 2],
    pool: Vec<String>,
    group: usize,
}

pub fn generate(spec: &SynthSpec) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vocab: Vec<usize> = (0..spec.vocab_size).collect();
    vocab.shuffle(&mut rng);
    let mut next_word = 0;
    let mut draw_pool = |n: usize| -> Vec<String> {
        (0..n)
            .map(|_| {
                let w = word(vocab[next_word % vocab.len()]);
                next_word += 1;
                w
            })
            .collect()
    };

    let visible = spec.visible_per_cluster();
    let mut nquads = String::new();
    let mut queries = String::new();
    let mut qrels = String::new();
    let mut labels = String::new();
    let mut training = String::new();
    let mut hidden_entities: Vec<(String, String, String)> = Vec::new();

    for t in 0..spec.num_types {
        let ty = type_iri(t);
        let graph = format!("<{NS}graph/t{t}>");
        let groups = spec.clusters_per_type.div_ceil(spec.group_size);
        let group_pools: Vec<Vec<String>> = (0..groups).map(|_| draw_pool(spec.group_pool_size)).collect();
        let clusters: Vec<Cluster> = (0..spec.clusters_per_type)
            .map(|c| {
                let id = t * spec.clusters_per_type + c;
                Cluster {
                    name: [name_token(2 * id), name_token(2 * id + 1)],
                    pool: draw_pool(spec.pool_size),
                    group: c / spec.group_size,
                }
            })
            .collect();

        for (c, cl) in clusters.iter().enumerate() {
            let qid = query_id(t, c);
            writeln!(queries, "{qid}\t{} {}", cl.name[0], cl.name[1]).unwrap();
            let members: Vec<String> = (0..spec.entities_per_cluster).map(|e| entity_iri(t, c, e)).collect();
            for (e, uri) in members.iter().enumerate() {
                let s = format!("<{uri}>");
                writeln!(nquads, "{s} <{RDF_TYPE}> <{ty}> {graph} .").unwrap();
                let title = if e < visible {
                    format!("{} {}", capitalize(&cl.name[0]), capitalize(&cl.name[1]))
                } else {
                    let a = cl.pool.choose(&mut rng).unwrap();
                    let b = cl.pool.choose(&mut rng).unwrap();
                    format!("{} {}", capitalize(a), capitalize(b))
                };
                writeln!(nquads, "{s} <{RDFS_LABEL}> \"{}\"@en {graph} .", escape_literal(&title)).unwrap();

                let group_pool = &group_pools[cl.group];
                let body: Vec<String> = cl
                    .pool
                    .iter()
                    .chain(group_pool)
                    .map(|w| {
                        if rng.gen_bool(spec.near_duplicate_noise) {
                            word(rng.gen_range(0..spec.vocab_size))
                        } else {
                            w.clone()
                        }
                    })
                    .collect();
                writeln!(nquads, "{s} <{DESCRIPTION}> \"{}\" {graph} .", body.join(" ")).unwrap();

                for j in 0..2 {
                    if !rng.gen_bool(spec.near_duplicate_noise) {
                        writeln!(nquads, "{s} <{NS}prop/feature{j}> <{NS}value/t{t}/c{c}/v{j}> {graph} .").unwrap();
                    }
                }
                if !rng.gen_bool(spec.near_duplicate_noise) {
                    writeln!(nquads, "{s} <{NS}prop/group> <{NS}value/t{t}/g{}> {graph} .", cl.group).unwrap();
                }

                writeln!(qrels, "{qid} 0 {uri} 5").unwrap();
                writeln!(training, "{qid}\t{ty}\t{uri}\t5").unwrap();
                writeln!(labels, "{uri}\t{}", cluster_label(t, c)).unwrap();
                if e >= visible {
                    hidden_entities.push((members[0].clone(), uri.clone(), graph.clone()));
                }
            }
        }
    }

    let links = (spec.link_fraction * hidden_entities.len() as f64).round() as usize;
    hidden_entities.shuffle(&mut rng);
    let mut linked: Vec<&(String, String, String)> = hidden_entities.iter().take(links).collect();
    linked.sort();
    for (from, to, graph) in linked {
        writeln!(nquads, "<{from}> <{OWL_SAME_AS}> <{to}> {graph} .").unwrap();
    }

    SynthCorpus {
        nquads,
        queries,
        qrels,
        labels,
        training,
    }
}

/// Parses a labels file into `(uri, label)` pairs.
pub fn parse_labels(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(u, l)| (u.to_string(), l.to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Qrels;
    use crate::rdf::{read_all, ParseMode};

    #[test]
    fn counts_follow_the_settings() {
        let spec = SynthSpec {
            num_types: 3,
            clusters_per_type: 4,
            entities_per_cluster: 8,
            hidden_fraction: 0.875,
            ..Default::default()
        };
        let corpus = generate(&spec);
        assert_eq!(corpus.queries.lines().count(), 12);
        let qrels = Qrels::parse(&corpus.qrels).unwrap();
        assert_eq!(qrels.queries.len(), 12);
        assert!(qrels.queries.values().all(|q| q.len() == 8));
        assert_eq!(corpus.labels.lines().count(), 96);
        let (quads, report) = read_all(corpus.nquads.as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(report.skipped(), 0);
        let subjects: std::collections::BTreeSet<&str> = quads.iter().map(|q| q.subject.as_str()).collect();
        assert_eq!(subjects.len(), 96);
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec::default();
        assert_eq!(generate(&spec), generate(&spec));
        assert_ne!(generate(&spec).nquads, generate(&SynthSpec { seed: 8, ..spec }).nquads);
    }

    #[test]
    fn names_only_in_visible_titles() {
        let spec = SynthSpec { entities_per_cluster: 4, hidden_fraction: 0.75, ..Default::default() };
        let corpus = generate(&spec);
        for line in corpus.queries.lines() {
            let (qid, text) = line.split_once('\t').unwrap();
            let holders: Vec<&str> = corpus
                .nquads
                .lines()
                .filter(|l| text.split(' ').any(|w| l.to_lowercase().contains(w)))
                .collect();
            assert_eq!(holders.len(), 1, "{qid}: {holders:?}");
            assert!(holders[0].contains("/e0>"));
        }
    }

    #[test]
    fn link_fraction_is_exact() {
        let spec = SynthSpec { clusters_per_type: 10, link_fraction: 0.3, ..Default::default() };
        let corpus = generate(&spec);
        let hidden = spec.num_types * spec.clusters_per_type * (spec.entities_per_cluster - spec.visible_per_cluster());
        let links = corpus.nquads.lines().filter(|l| l.contains(OWL_SAME_AS)).count();
        assert_eq!(links, (0.3 * hidden as f64).round() as usize);
    }

    #[test]
    fn token_spaces_are_disjoint() {
        let words: std::collections::HashSet<String> = (0..5000).map(word).collect();
        assert_eq!(words.len(), 5000);
        assert!((0..500).map(name_token).all(|n| !words.contains(&n)));
    }
}
