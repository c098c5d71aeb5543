//! Clustering of LSH buckets with x-means and spectral clustering, and the
//! resulting cluster space used for result expansion.

pub mod kmeans;
pub mod linalg;
pub mod spectral;
pub mod xmeans;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{densify, FeatureVector};
use crate::lsh::Bucket;

pub use kmeans::{kmeans, KMeansResult};
pub use linalg::{eig_sym, EigenDecomposition, EigenError, SymmetricMatrix};
pub use spectral::{affinity_matrix, choose_k, laplacian, spectral, spectral_from_affinity, SpectralConfig};
pub use xmeans::{bic, xmeans, XMeansConfig};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k = {k} exceeds the number of points ({n})")]
    KExceedsPoints { k: usize, n: usize },
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("no feature vector for {0}")]
    MissingVector(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Xmeans,
    Spectral,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Xmeans => "xmeans",
            Algorithm::Spectral => "spectral",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xmeans" => Ok(Algorithm::Xmeans),
            "spectral" => Ok(Algorithm::Spectral),
            other => Err(format!("unknown clustering algorithm: {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterRecord {
    pub cluster_id: usize,
    pub entity_type: String,
    pub bucket_id: usize,
    pub algorithm: Algorithm,
    pub members: Vec<String>,
}

/// Adjusted Rand Index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_rows * sum_cols / choose2(n);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        // both labelings trivial in the same way
        return if rows.len() == cols.len() { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

/// Clusters one bucket. Buckets with fewer than three members come back as a
/// single cluster. Groups are returned in order of their first member.
pub fn cluster_bucket(
    bucket: &Bucket,
    vectors: &HashMap<&str, &FeatureVector>,
    algorithm: Algorithm,
    xmeans_config: &XMeansConfig,
    spectral_config: &SpectralConfig,
    seed: u64,
) -> Result<Vec<Vec<String>>, ClusterError> {
    if bucket.members.len() < 3 {
        return Ok(vec![bucket.members.clone()]);
    }
    let vs: Vec<&FeatureVector> = bucket
        .members
        .iter()
        .map(|u| {
            vectors
                .get(u.as_str())
                .copied()
                .ok_or_else(|| ClusterError::MissingVector(u.clone()))
        })
        .collect::<Result<_, _>>()?;
    let assignment = match algorithm {
        Algorithm::Xmeans => {
            let points = densify(&vs);
            let cfg = XMeansConfig {
                seed,
                ..*xmeans_config
            };
            xmeans(&points, &cfg).assignment
        }
        Algorithm::Spectral => spectral(&vs, spectral_config, seed)?.assignment,
    };
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut first_seen: HashMap<usize, usize> = HashMap::new();
    for (i, (uri, label)) in bucket.members.iter().zip(&assignment).enumerate() {
        let key = *first_seen.entry(*label).or_insert(i);
        groups.entry(key).or_default().push(uri.clone());
    }
    Ok(groups.into_values().collect())
}

/// Clusters of one algorithm, with an inverted uri → cluster map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterSpace {
    records: Vec<ClusterRecord>,
    by_uri: HashMap<String, Vec<usize>>,
}

impl ClusterSpace {
    /// Records are renumbered so that `cluster_id` is their position.
    pub fn new(mut records: Vec<ClusterRecord>) -> Self {
        let mut by_uri: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in records.iter_mut().enumerate() {
            r.cluster_id = i;
            for m in &r.members {
                by_uri.entry(m.clone()).or_default().push(i);
            }
        }
        ClusterSpace { records, by_uri }
    }

    pub fn records(&self) -> &[ClusterRecord] {
        &self.records
    }

    pub fn get(&self, cluster_id: usize) -> Option<&ClusterRecord> {
        self.records.get(cluster_id)
    }

    pub fn clusters_of(&self, uri: &str) -> &[usize] {
        self.by_uri.get(uri).map_or(&[], Vec::as_slice)
    }

    pub fn table_path(dir: &Path, algorithm: Algorithm) -> PathBuf {
        dir.join(format!("clusters-{}.tsv", algorithm.name()))
    }

    pub fn map_path(dir: &Path, algorithm: Algorithm) -> PathBuf {
        dir.join(format!("clusters-{}.map", algorithm.name()))
    }

    /// Writes `clusters-<algo>.tsv` (`cluster_id \t entity_type \t bucket_id
    /// \t uri`) and `clusters-<algo>.map` (`uri \t id,id,...`, sorted by uri).
    pub fn save(&self, dir: &Path, algorithm: Algorithm) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut table = String::new();
        for r in &self.records {
            for m in &r.members {
                table.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    r.cluster_id, r.entity_type, r.bucket_id, m
                ));
            }
        }
        fs::write(Self::table_path(dir, algorithm), table)?;
        let sorted: BTreeMap<&String, &Vec<usize>> = self.by_uri.iter().collect();
        let mut map = String::new();
        for (uri, ids) in sorted {
            let ids: Vec<String> = ids.iter().map(usize::to_string).collect();
            map.push_str(&format!("{uri}\t{}\n", ids.join(",")));
        }
        fs::write(Self::map_path(dir, algorithm), map)
    }

    pub fn load(dir: &Path, algorithm: Algorithm) -> io::Result<Self> {
        let bad = |line: &str| io::Error::new(io::ErrorKind::InvalidData, format!("bad cluster line: {line}"));
        let mut records: Vec<ClusterRecord> = Vec::new();
        for line in fs::read_to_string(Self::table_path(dir, algorithm))?.lines() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            let id: usize = f[0].parse().map_err(|_| bad(line))?;
            let bucket_id: usize = f[2].parse().map_err(|_| bad(line))?;
            match records.last_mut() {
                Some(r) if r.cluster_id == id => r.members.push(f[3].to_string()),
                _ => {
                    if id != records.len() {
                        return Err(bad(line));
                    }
                    records.push(ClusterRecord {
                        cluster_id: id,
                        entity_type: f[1].to_string(),
                        bucket_id,
                        algorithm,
                        members: vec![f[3].to_string()],
                    });
                }
            }
        }
        Ok(Self::new(records))
    }
}
