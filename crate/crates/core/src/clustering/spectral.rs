//! Spectral clustering over the unnormalized graph Laplacian `L = D − A`.

use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use super::linalg::{eig_sym, EigenError, SymmetricMatrix};
use crate::features::{distance, FeatureVector};
use crate::lsh::splitmix64;

#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    pub matrix: SymmetricMatrix,
    /// Median pairwise distance used as the kernel bandwidth.
    pub sigma: f64,
    /// All pairwise distances were zero; the matrix is fully connected.
    pub degenerate: bool,
}

/// Gaussian kernel `exp(−d² / 2σ²)` with σ the median pairwise distance and
/// a zero diagonal.
pub fn affinity_from_distances(dist: &SymmetricMatrix) -> Affinity {
    let n = dist.n();
    let mut pairs: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in 0..i {
            pairs.push(dist.get(i, j));
        }
    }
    pairs.sort_by(f64::total_cmp);
    let sigma = match pairs.len() {
        0 => 0.0,
        m if m % 2 == 1 => pairs[m / 2],
        m => 0.5 * (pairs[m / 2 - 1] + pairs[m / 2]),
    };
    let degenerate = pairs.iter().all(|&d| d == 0.0);
    let matrix = SymmetricMatrix::from_fn(n, |i, j| {
        if i == j {
            return 0.0;
        }
        let d = dist.get(i, j);
        if d == 0.0 {
            1.0
        } else if sigma == 0.0 {
            0.0
        } else {
            (-d * d / (2.0 * sigma * sigma)).exp()
        }
    });
    Affinity {
        matrix,
        sigma,
        degenerate,
    }
}

pub fn affinity_matrix(vectors: &[&FeatureVector]) -> Affinity {
    let dist = SymmetricMatrix::from_fn(vectors.len(), |i, j| {
        if i == j {
            0.0
        } else {
            distance(vectors[i], vectors[j])
        }
    });
    affinity_from_distances(&dist)
}

/// `D − A` with `D` the diagonal degree matrix of `A`.
pub fn laplacian(a: &SymmetricMatrix) -> SymmetricMatrix {
    let degrees: Vec<f64> = (0..a.n())
        .map(|i| (0..a.n()).filter(|&j| j != i).map(|j| a.get(i, j)).sum())
        .collect();
    SymmetricMatrix::from_fn(a.n(), |i, j| if i == j { degrees[i] } else { -a.get(i, j) })
}

/// Eigengap heuristic: the 1-based `i` in `[2, min(n−1, k_max)]` maximizing
/// `λ_{i+1} − λ_i`, smallest `i` on ties. Fewer than three eigenvalues give 1.
pub fn choose_k(eigenvalues: &[f64], k_max: usize) -> usize {
    let n = eigenvalues.len();
    if n < 3 {
        return 1;
    }
    let upper = (n - 1).min(k_max).max(2);
    let mut best = (2, f64::NEG_INFINITY);
    for i in 2..=upper {
        let gap = eigenvalues[i] - eigenvalues[i - 1];
        if gap > best.1 {
            best = (i, gap);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub k_max: usize,
    pub max_eigen_dim: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// k-means restarts on the embedding; the lowest WCSS wins.
    pub restarts: usize,
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_max < 2 {
            return Err("k_max must be at least 2".into());
        }
        if self.max_eigen_dim == 0 || self.max_iter == 0 || self.restarts == 0 {
            return Err("max_eigen_dim, max_iter and restarts must be positive".into());
        }
        Ok(())
    }
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            k_max: 50,
            max_eigen_dim: super::linalg::DEFAULT_MAX_EIGEN_DIM,
            max_iter: 100,
            tol: 1e-6,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub assignment: Vec<usize>,
    pub k: usize,
    pub eigenvalues: Vec<f64>,
}

/// Laplacian → eigendecomposition → eigengap k → k-means on the rows of the
/// first k eigenvectors.
pub fn spectral_from_affinity(
    a: &SymmetricMatrix,
    config: &SpectralConfig,
    seed: u64,
) -> Result<SpectralResult, EigenError> {
    let n = a.n();
    if n < 3 {
        return Ok(SpectralResult {
            assignment: vec![0; n],
            k: n.min(1),
            eigenvalues: Vec::new(),
        });
    }
    let l = laplacian(a);
    let eig = eig_sym(&l, config.max_eigen_dim)?;
    let k = choose_k(&eig.values, config.k_max);
    let embedding: Vec<Vec<f64>> = (0..n).map(|i| eig.embedding_row(i, k)).collect();
    let mut state = seed;
    let km = (0..config.restarts)
        .map(|_| {
            state = splitmix64(state);
            kmeans(&embedding, k, state, config.max_iter, config.tol).expect("k < n by construction")
        })
        .reduce(|best, r| if r.wcss < best.wcss { r } else { best })
        .expect("restarts >= 1");
    Ok(SpectralResult {
        assignment: km.assignment,
        k,
        eigenvalues: eig.values,
    })
}

pub fn spectral(
    vectors: &[&FeatureVector],
    config: &SpectralConfig,
    seed: u64,
) -> Result<SpectralResult, EigenError> {
    if vectors.len() < 3 {
        return Ok(SpectralResult {
            assignment: vec![0; vectors.len()],
            k: vectors.len().min(1),
            eigenvalues: Vec::new(),
        });
    }
    let affinity = affinity_matrix(vectors);
    if affinity.degenerate {
        // every point coincides; there is nothing to separate
        return Ok(SpectralResult {
            assignment: vec![0; vectors.len()],
            k: 1,
            eigenvalues: Vec::new(),
        });
    }
    spectral_from_affinity(&affinity.matrix, config, seed)
}
