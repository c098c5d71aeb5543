//! MinHash signatures and LSH banding.
//!
//! Buckets are the connected components of the band-collision graph, so the
//! buckets of one entity type always partition it.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LshParams {
    pub num_hashes: usize,
    pub bands: usize,
    pub rows: usize,
    pub seed: u64,
    pub max_bucket_size: usize,
}

impl Default for LshParams {
    fn default() -> Self {
        LshParams {
            num_hashes: 128,
            bands: 32,
            rows: 4,
            seed: 0x5eed,
            max_bucket_size: 2000,
        }
    }
}

impl LshParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_hashes == 0 || self.bands == 0 || self.rows == 0 {
            return Err("num_hashes, bands and rows must be positive".into());
        }
        if self.bands * self.rows != self.num_hashes {
            return Err(format!(
                "bands ({}) x rows ({}) must equal num_hashes ({})",
                self.bands, self.rows, self.num_hashes
            ));
        }
        if self.max_bucket_size == 0 {
            return Err("max_bucket_size must be positive".into());
        }
        Ok(())
    }
}

/// Probability that a pair with Jaccard similarity `s` agrees on at least one
/// band of `rows` rows out of `bands`.
pub fn same_band_probability(s: f64, rows: usize, bands: usize) -> f64 {
    1.0 - (1.0 - s.powi(rows as i32)).powi(bands as i32)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-position seeds derived from the run seed.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seeds: Vec<u64>,
}

impl MinHasher {
    pub fn new(params: &LshParams) -> Self {
        let mut state = params.seed;
        let seeds = (0..params.num_hashes)
            .map(|_| {
                state = splitmix64(state);
                state
            })
            .collect();
        MinHasher { seeds }
    }

    pub fn num_hashes(&self) -> usize {
        self.seeds.len()
    }

    /// Signature over a set of feature keys; weights play no part.
    pub fn signature<'a>(
        &self,
        uri: &str,
        keys: impl IntoIterator<Item = &'a str>,
    ) -> MinHashSignature {
        let mut values = vec![u64::MAX; self.seeds.len()];
        let mut empty = true;
        for key in keys {
            empty = false;
            let base = fnv1a(key.as_bytes());
            for (v, seed) in values.iter_mut().zip(&self.seeds) {
                let h = splitmix64(base ^ seed);
                if h < *v {
                    *v = h;
                }
            }
        }
        MinHashSignature {
            uri: uri.to_string(),
            values,
            empty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub uri: String,
    pub values: Vec<u64>,
    /// Set when the key set was empty; `values` then holds sentinel maxima.
    pub empty: bool,
}

impl MinHashSignature {
    pub fn agreement(&self, other: &MinHashSignature) -> f64 {
        let same = self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub bucket_id: usize,
    pub entity_type: String,
    pub members: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BucketError {
    #[error("signature length {got} differs from {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index as root keeps components deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of band collisions among `members` (indices into
/// `sigs`), using `bands` bands of `rows` positions each.
fn band_components(
    sigs: &[&MinHashSignature],
    members: &[usize],
    rows: usize,
    bands: usize,
) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(members.len());
    for band in 0..bands {
        let mut seen: HashMap<&[u64], usize> = HashMap::new();
        for (local, &m) in members.iter().enumerate() {
            let sig = sigs[m];
            if sig.empty {
                continue;
            }
            let key = &sig.values[band * rows..(band + 1) * rows];
            match seen.get(key) {
                Some(&first) => uf.union(first, local),
                None => {
                    seen.insert(key, local);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for local in 0..members.len() {
        let root = uf.find(local);
        groups.entry(root).or_default().push(members[local]);
    }
    groups.into_values().collect()
}

fn split_oversized(
    sigs: &[&MinHashSignature],
    group: Vec<usize>,
    rows: usize,
    params: &LshParams,
    out: &mut Vec<Vec<usize>>,
) {
    let next_rows = rows + 1;
    if group.len() <= params.max_bucket_size || next_rows > params.num_hashes {
        out.push(group);
        return;
    }
    // a single part means stricter bands still collide; recursion tightens further
    for p in band_components(sigs, &group, next_rows, params.num_hashes / next_rows) {
        split_oversized(sigs, p, next_rows, params, out);
    }
}

/// Buckets one type's entities. Output is ordered by smallest member uri and
/// members are sorted; ids are positions in that order.
pub fn bucket_entities(
    entity_type: &str,
    signatures: &[MinHashSignature],
    params: &LshParams,
) -> Result<Vec<Bucket>, BucketError> {
    for s in signatures {
        if s.values.len() != params.num_hashes {
            return Err(BucketError::LengthMismatch {
                expected: params.num_hashes,
                got: s.values.len(),
            });
        }
    }
    let mut sigs: Vec<&MinHashSignature> = signatures.iter().collect();
    sigs.sort_by(|a, b| a.uri.cmp(&b.uri));
    let all: Vec<usize> = (0..sigs.len()).collect();
    let mut groups = Vec::new();
    for g in band_components(&sigs, &all, params.rows, params.bands) {
        split_oversized(&sigs, g, params.rows, params, &mut groups);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(bucket_id, g)| Bucket {
            bucket_id,
            entity_type: entity_type.to_string(),
            members: g.into_iter().map(|i| sigs[i].uri.clone()).collect(),
        })
        .collect())
}

/// `bucket_id \t uri` lines, sorted by bucket then uri.
pub fn write_buckets(path: &Path, buckets: &[Bucket]) -> io::Result<()> {
    let mut out = String::new();
    for b in buckets {
        for m in &b.members {
            out.push_str(&format!("{}\t{}\n", b.bucket_id, m));
        }
    }
    fs::write(path, out)
}

pub fn read_buckets(path: &Path, entity_type: &str) -> io::Result<Vec<Bucket>> {
    let mut map: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for line in fs::read_to_string(path)?.lines() {
        let (id, uri) = line
            .split_once('\t')
            .and_then(|(id, u)| Some((id.parse::<usize>().ok()?, u)))
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("bad bucket line: {line}")))?;
        map.entry(id).or_default().push(uri.to_string());
    }
    Ok(map
        .into_iter()
        .map(|(bucket_id, members)| Bucket {
            bucket_id,
            entity_type: entity_type.to_string(),
            members,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(ks: &[&str]) -> Vec<String> {
        ks.iter().map(|s| s.to_string()).collect()
    }

    fn sig(h: &MinHasher, uri: &str, ks: &[String]) -> MinHashSignature {
        h.signature(uri, ks.iter().map(String::as_str))
    }

    #[test]
    fn identical_sets_identical_signatures() {
        let h = MinHasher::new(&LshParams::default());
        let a = sig(&h, "a", &keys(&["x", "y", "z"]));
        let b = sig(&h, "b", &keys(&["z", "y", "x"]));
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.len(), 128);
    }

    #[test]
    fn disjoint_singletons_disagree() {
        let h = MinHasher::new(&LshParams::default());
        let a = sig(&h, "a", &keys(&["U:alpha"]));
        let b = sig(&h, "b", &keys(&["U:beta"]));
        assert_eq!(a.agreement(&b), 0.0);
    }

    #[test]
    fn empty_set_is_flagged_and_isolated() {
        let p = LshParams::default();
        let h = MinHasher::new(&p);
        let e1 = sig(&h, "e1", &[]);
        let e2 = sig(&h, "e2", &[]);
        assert!(e1.empty);
        assert!(e1.values.iter().all(|&v| v == u64::MAX));
        let buckets = bucket_entities("T", &[e1, e2], &p).unwrap();
        assert_eq!(buckets.len(), 2);
    }

    #[test]
    fn identical_entities_share_bucket_and_disjoint_do_not() {
        let p = LshParams::default();
        let h = MinHasher::new(&p);
        let a: Vec<String> = (0..20).map(|i| format!("a{i}")).collect();
        let b: Vec<String> = (0..20).map(|i| format!("b{i}")).collect();
        let sigs = vec![sig(&h, "x2", &a), sig(&h, "x1", &a), sig(&h, "y", &b)];
        let buckets = bucket_entities("T", &sigs, &p).unwrap();
        assert_eq!(buckets.len(), 2);
        assert_eq!(buckets[0].members, vec!["x1", "x2"]);
        assert_eq!(buckets[1].members, vec!["y"]);
        assert_eq!(buckets[1].bucket_id, 1);
    }

    #[test]
    fn oversized_buckets_are_split() {
        let p = LshParams {
            max_bucket_size: 3,
            ..Default::default()
        };
        let h = MinHasher::new(&p);
        // two groups that are near-identical inside and weakly linked across
        let mut sigs = Vec::new();
        for g in 0..2 {
            for i in 0..3 {
                let mut ks: Vec<String> = (0..10).map(|j| format!("g{g}k{j}")).collect();
                ks.extend((0..60).map(|j| format!("shared{j}")));
                ks.push(format!("own{g}{i}"));
                sigs.push(sig(&h, &format!("g{g}e{i}"), &ks));
            }
        }
        let buckets = bucket_entities("T", &sigs, &p).unwrap();
        assert!(buckets.iter().all(|b| b.members.len() <= 3), "{buckets:?}");
        let total: usize = buckets.iter().map(|b| b.members.len()).sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn analytic_probability() {
        let p = same_band_probability(0.8, 4, 32);
        assert!((p - (1.0 - (1.0 - 0.4096f64).powi(32))).abs() < 1e-15);
        assert!(p > 0.9999999);
        assert!(same_band_probability(0.1, 4, 32) < 0.01);
    }

    #[test]
    fn params_validation() {
        assert!(LshParams::default().validate().is_ok());
        assert!(LshParams { bands: 31, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn bucket_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.tsv");
        let buckets = vec![
            Bucket { bucket_id: 0, entity_type: "T".into(), members: vec!["a".into(), "c".into()] },
            Bucket { bucket_id: 1, entity_type: "T".into(), members: vec!["b".into()] },
        ];
        write_buckets(&path, &buckets).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "0\ta\n0\tc\n1\tb\n");
        assert_eq!(read_buckets(&path, "T").unwrap(), buckets);
    }
}
