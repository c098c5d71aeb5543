//! x-means: k-means that grows k by BIC-scored centroid splits.

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, lloyd, sq_dist};
use crate::lsh::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XMeansConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Supplied per bucket by the caller, never read from configuration.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for XMeansConfig {
    fn default() -> Self {
        XMeansConfig {
            k_min: 2,
            k_max: 50,
            max_iter: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl XMeansConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(format!(
                "need 2 <= k_min <= k_max, got [{}, {}]",
                self.k_min, self.k_max
            ));
        }
        if self.max_iter == 0 {
            return Err("max_iter must be positive".into());
        }
        Ok(())
    }
}

/// Coordinates that are not constant across `points`.
fn effective_dimension(points: &[&[f64]]) -> usize {
    let Some(first) = points.first() else {
        return 0;
    };
    (0..first.len())
        .filter(|&j| points.iter().any(|p| p[j] != first[j]))
        .count()
}

/// BIC of `assignment` under the identical spherical Gaussian model;
/// higher is better.
///
/// ```text
/// σ² = Σ_i ‖x_i − c_a(i)‖² / (n − k)
/// loglik = Σ_c n_c·ln(n_c / n) − n/2·ln(2π) − n·d/2·ln σ² − (n − k)/2
/// BIC = loglik − k(d + 1)/2 · ln n
/// ```
///
/// A zero-distortion model yields `+∞`; a model with no residual degrees of
/// freedom (n ≤ k) yields `−∞`.
pub fn bic(points: &[&[f64]], assignment: &[usize]) -> f64 {
    let n = points.len();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let labels = assignment.iter().copied().max().unwrap_or(0) + 1;
    let dim = points[0].len();
    let mut counts = vec![0usize; labels];
    let mut sums = vec![vec![0.0; dim]; labels];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    let k = counts.iter().filter(|&&c| c > 0).count();
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|x| x / c.max(1) as f64).collect())
        .collect();
    let distortion: f64 = points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    if distortion == 0.0 {
        return f64::INFINITY;
    }
    if n <= k {
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    let kf = k as f64;
    let d = effective_dimension(points) as f64;
    let variance = distortion / (nf - kf);
    let membership: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64 / nf).ln())
        .sum();
    let loglik = membership
        - nf / 2.0 * (2.0 * std::f64::consts::PI).ln()
        - nf * d / 2.0 * variance.ln()
        - (nf - kf) / 2.0;
    let params = kf * (d + 1.0);
    loglik - params / 2.0 * nf.ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct XMeansResult {
    /// Dense labels `0..k`.
    pub assignment: Vec<usize>,
    pub k: usize,
}

fn relabel(assignment: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let labels = assignment
        .iter()
        .map(|&a| {
            let next = map.len();
            *map.entry(a).or_insert(next)
        })
        .collect();
    (labels, map.len())
}

fn centroids_of(points: &[Vec<f64>], assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|x| x / c as f64).collect())
        .collect()
}

/// Starts from `k_min` clusters and, round by round, splits every cluster
/// whose local 2-means child model has a higher BIC than the parent, until
/// no split is accepted or `k_max` is reached. After each round the full
/// centroid set is refined with Lloyd iterations.
pub fn xmeans(points: &[Vec<f64>], config: &XMeansConfig) -> XMeansResult {
    let n = points.len();
    if n < 2 {
        return XMeansResult {
            assignment: vec![0; n],
            k: n.min(1),
        };
    }
    let k0 = config.k_min.min(n);
    let start = kmeans(points, k0, config.seed, config.max_iter, config.tol)
        .expect("k0 <= n by construction");
    let (mut assignment, mut k) = relabel(&start.assignment);

    let mut round: u64 = 0;
    while k < config.k_max {
        round += 1;
        let mut centroids = Vec::new();
        let mut accepted = 0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            let local: Vec<Vec<f64>> = members.into_iter().cloned().collect();
            let parent = centroids_of(&local, &vec![0; local.len()], 1).remove(0);
            let room = k + accepted < config.k_max;
            if local.len() < 3 || !room {
                centroids.push(parent);
                continue;
            }
            let split_seed = splitmix64(config.seed ^ (round << 32) ^ c as u64);
            let child = kmeans(&local, 2, split_seed, config.max_iter, config.tol)
                .expect("cluster has at least 3 points");
            let views: Vec<&[f64]> = local.iter().map(Vec::as_slice).collect();
            let parent_bic = bic(&views, &vec![0; local.len()]);
            let child_bic = bic(&views, &child.assignment);
            if child.populated() == 2 && child_bic > parent_bic {
                accepted += 1;
                centroids.extend(child.centroids);
            } else {
                centroids.push(parent);
            }
        }
        if accepted == 0 {
            break;
        }
        let refined = lloyd(points, centroids, config.max_iter, config.tol);
        let (a, kk) = relabel(&refined.assignment);
        if kk <= k {
            break;
        }
        assignment = a;
        k = kk;
    }
    XMeansResult { assignment, k }
}
