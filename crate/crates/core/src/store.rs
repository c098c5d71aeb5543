//! Entity profiles and their on-disk store.
//!
//! A store directory holds three files:
//!
//! * `profiles.dat`: one record per entity in ascending uri order. A record
//!   is a sequence of length-prefixed fields `<len>:<bytes>` (len is the
//!   decimal byte count) followed by `\n`. Field order: uri, type count,
//!   types, title count, titles, body count, body literals, property count,
//!   then predicate/object pairs.
//! * `profiles.idx`: `uri\toffset\n` lines sorted by uri, offset being the
//!   byte position of the record in `profiles.dat`.
//! * `manifest.json`: [`StoreManifest`].
//!
//! Identical input always produces byte-identical files.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rdf::{Object, Quad};
use crate::vocab::{self, RDF_TYPE, UNTYPED};

pub const PROFILES_FILE: &str = "profiles.dat";
pub const INDEX_FILE: &str = "profiles.idx";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown entity uri: {0}")]
    UnknownUri(String),
    #[error("title predicate set is empty")]
    NoTitlePredicates,
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntityProfile {
    pub uri: String,
    pub types: BTreeSet<String>,
    pub title_literals: Vec<String>,
    /// Every textual literal of the entity, titles included.
    pub body_literals: Vec<String>,
    pub object_properties: BTreeSet<(String, String)>,
}

impl EntityProfile {
    pub fn primary_title(&self) -> Option<&str> {
        self.title_literals.first().map(String::as_str)
    }

    pub fn is_untyped(&self) -> bool {
        self.types.len() == 1 && self.types.contains(UNTYPED)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub entity_count: usize,
    pub type_histogram: BTreeMap<String, usize>,
    pub title_predicates: Vec<String>,
}

/// Groups quads by subject into profiles, sorted by uri.
///
/// Quads may arrive in any order; duplicate triples (ignoring the graph)
/// collapse into one.
pub fn assemble_profiles(
    quads: &[Quad],
    title_predicates: &[String],
) -> Result<Vec<EntityProfile>, StoreError> {
    if title_predicates.is_empty() {
        return Err(StoreError::NoTitlePredicates);
    }
    let titles: HashSet<&str> = title_predicates.iter().map(String::as_str).collect();

    // BTreeSet gives both dedup and an input-order independent layout.
    let mut triples: BTreeSet<(&str, &str, &Object)> = BTreeSet::new();
    for q in quads {
        triples.insert((&q.subject, &q.predicate, &q.object));
    }

    let mut profiles: Vec<EntityProfile> = Vec::new();
    for (s, p, o) in triples {
        if profiles.last().map(|e| e.uri.as_str()) != Some(s) {
            profiles.push(EntityProfile {
                uri: s.to_string(),
                ..Default::default()
            });
        }
        let profile = profiles.last_mut().unwrap();
        match o {
            Object::Iri(iri) if p == RDF_TYPE => {
                profile.types.insert(iri.clone());
            }
            Object::Iri(iri) => {
                profile
                    .object_properties
                    .insert((p.to_string(), iri.clone()));
            }
            Object::Literal(lit) => {
                if titles.contains(p) {
                    profile.title_literals.push(lit.lexical_form.clone());
                }
                profile.body_literals.push(lit.lexical_form.clone());
            }
        }
    }
    for p in &mut profiles {
        if p.types.is_empty() {
            p.types.insert(UNTYPED.to_string());
        }
    }
    Ok(profiles)
}

fn push_field(buf: &mut Vec<u8>, field: &str) {
    buf.extend_from_slice(field.len().to_string().as_bytes());
    buf.push(b':');
    buf.extend_from_slice(field.as_bytes());
}

fn encode_profile(p: &EntityProfile, buf: &mut Vec<u8>) {
    push_field(buf, &p.uri);
    push_field(buf, &p.types.len().to_string());
    for t in &p.types {
        push_field(buf, t);
    }
    push_field(buf, &p.title_literals.len().to_string());
    for t in &p.title_literals {
        push_field(buf, t);
    }
    push_field(buf, &p.body_literals.len().to_string());
    for t in &p.body_literals {
        push_field(buf, t);
    }
    push_field(buf, &p.object_properties.len().to_string());
    for (pred, obj) in &p.object_properties {
        push_field(buf, pred);
        push_field(buf, obj);
    }
    buf.push(b'\n');
}

struct RecordReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> RecordReader<'a> {
    fn field(&mut self) -> Result<&'a str, StoreError> {
        let rest = &self.data[self.pos.min(self.data.len())..];
        let colon = rest
            .iter()
            .position(|&b| b == b':')
            .ok_or_else(|| StoreError::Corrupt(format!("missing length at {}", self.pos)))?;
        let len: usize = std::str::from_utf8(&rest[..colon])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| StoreError::Corrupt(format!("bad length at {}", self.pos)))?;
        let start = colon + 1;
        let bytes = rest
            .get(start..start + len)
            .ok_or_else(|| StoreError::Corrupt(format!("truncated field at {}", self.pos)))?;
        self.pos += start + len;
        std::str::from_utf8(bytes)
            .map_err(|_| StoreError::Corrupt(format!("non-utf8 field at {}", self.pos)))
    }

    fn count(&mut self) -> Result<usize, StoreError> {
        self.field()?
            .parse()
            .map_err(|_| StoreError::Corrupt(format!("bad count at {}", self.pos)))
    }

    fn profile(&mut self) -> Result<EntityProfile, StoreError> {
        let uri = self.field()?.to_string();
        let mut p = EntityProfile {
            uri,
            ..Default::default()
        };
        for _ in 0..self.count()? {
            p.types.insert(self.field()?.to_string());
        }
        for _ in 0..self.count()? {
            p.title_literals.push(self.field()?.to_string());
        }
        for _ in 0..self.count()? {
            p.body_literals.push(self.field()?.to_string());
        }
        for _ in 0..self.count()? {
            let pred = self.field()?.to_string();
            let obj = self.field()?.to_string();
            p.object_properties.insert((pred, obj));
        }
        if self.data.get(self.pos) != Some(&b'\n') {
            return Err(StoreError::Corrupt(format!("missing record end at {}", self.pos)));
        }
        self.pos += 1;
        Ok(p)
    }
}

/// Immutable, random-access collection of entity profiles.
#[derive(Debug, Clone)]
pub struct EntityStore {
    data: Vec<u8>,
    index: Vec<(String, usize)>,
    manifest: StoreManifest,
}

impl EntityStore {
    pub fn assemble(quads: &[Quad], title_predicates: &[String]) -> Result<Self, StoreError> {
        let profiles = assemble_profiles(quads, title_predicates)?;
        Ok(Self::from_profiles(profiles, title_predicates))
    }

    pub fn from_profiles(mut profiles: Vec<EntityProfile>, title_predicates: &[String]) -> Self {
        profiles.sort_by(|a, b| a.uri.cmp(&b.uri));
        profiles.dedup_by(|a, b| a.uri == b.uri);
        let mut data = Vec::new();
        let mut index = Vec::with_capacity(profiles.len());
        let mut type_histogram = BTreeMap::new();
        for p in &profiles {
            index.push((p.uri.clone(), data.len()));
            encode_profile(p, &mut data);
            for t in &p.types {
                *type_histogram.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let mut title_predicates = title_predicates.to_vec();
        title_predicates.sort();
        title_predicates.dedup();
        EntityStore {
            data,
            manifest: StoreManifest {
                entity_count: index.len(),
                type_histogram,
                title_predicates,
            },
            index,
        }
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, uri: &str) -> bool {
        self.position(uri).is_some()
    }

    fn position(&self, uri: &str) -> Option<usize> {
        self.index
            .binary_search_by(|(u, _)| u.as_str().cmp(uri))
            .ok()
    }

    fn decode_at(&self, offset: usize) -> Result<EntityProfile, StoreError> {
        RecordReader {
            data: &self.data,
            pos: offset,
        }
        .profile()
    }

    pub fn get(&self, uri: &str) -> Result<EntityProfile, StoreError> {
        let i = self
            .position(uri)
            .ok_or_else(|| StoreError::UnknownUri(uri.to_string()))?;
        self.decode_at(self.index[i].1)
    }

    /// All uris in lexicographic order.
    pub fn uris(&self) -> impl Iterator<Item = &str> {
        self.index.iter().map(|(u, _)| u.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = EntityProfile> + '_ {
        self.index
            .iter()
            .map(move |(_, off)| self.decode_at(*off).expect("store validated on load"))
    }

    /// Profiles declaring `entity_type`, in lexicographic uri order.
    pub fn iterate_by_type<'a>(
        &'a self,
        entity_type: &'a str,
    ) -> impl Iterator<Item = EntityProfile> + 'a {
        self.iter().filter(move |p| p.types.contains(entity_type))
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.manifest.type_histogram.keys().map(String::as_str)
    }

    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(PROFILES_FILE), &self.data)?;
        let mut idx = String::new();
        for (uri, off) in &self.index {
            idx.push_str(uri);
            idx.push('\t');
            idx.push_str(&off.to_string());
            idx.push('\n');
        }
        fs::write(dir.join(INDEX_FILE), idx)?;
        let mut manifest = serde_json::to_string_pretty(&self.manifest)?;
        manifest.push('\n');
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let data = fs::read(dir.join(PROFILES_FILE))?;
        let idx = fs::read_to_string(dir.join(INDEX_FILE))?;
        let manifest: StoreManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let mut index = Vec::new();
        for line in idx.lines() {
            let (uri, off) = line
                .split_once('\t')
                .ok_or_else(|| StoreError::Corrupt(format!("bad index line: {line}")))?;
            let off: usize = off
                .parse()
                .map_err(|_| StoreError::Corrupt(format!("bad offset: {line}")))?;
            index.push((uri.to_string(), off));
        }
        if index.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(StoreError::Corrupt("index not sorted".into()));
        }
        if index.len() != manifest.entity_count {
            return Err(StoreError::Corrupt("manifest entity_count mismatch".into()));
        }
        let store = EntityStore {
            data,
            index,
            manifest,
        };
        for (uri, off) in &store.index {
            if store.decode_at(*off)?.uri != *uri {
                return Err(StoreError::Corrupt(format!("offset mismatch for {uri}")));
            }
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub explicit_similarity_statements: u64,
    pub object_property_statements: u64,
}

/// Per-graph counts of explicit similarity statements versus all
/// IRI-object statements (rdf:type excluded). The default graph is keyed by
/// the empty string.
pub fn corpus_stats<'a>(quads: impl IntoIterator<Item = &'a Quad>) -> BTreeMap<String, GraphStats> {
    let mut seen: HashSet<&Quad> = HashSet::new();
    let mut stats: BTreeMap<String, GraphStats> = BTreeMap::new();
    for q in quads {
        if q.predicate == RDF_TYPE || !matches!(q.object, Object::Iri(_)) || !seen.insert(q) {
            continue;
        }
        let entry = stats.entry(q.graph.clone().unwrap_or_default()).or_default();
        entry.object_property_statements += 1;
        if vocab::is_similarity_predicate(&q.predicate) {
            entry.explicit_similarity_statements += 1;
        }
    }
    stats
}

/// Two-column table (plus graph label) for scatter plotting.
pub fn format_corpus_stats(stats: &BTreeMap<String, GraphStats>) -> String {
    let mut out = String::from("graph\texplicit_similarity\tobject_properties\n");
    for (g, s) in stats {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            if g.is_empty() { "-" } else { g },
            s.explicit_similarity_statements,
            s.object_property_statements
        ));
    }
    out
}
