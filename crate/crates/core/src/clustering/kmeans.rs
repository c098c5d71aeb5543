//! k-means++ seeding and Lloyd iterations over dense points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClusterError;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares of the final assignment.
    pub wcss: f64,
    /// WCSS after every assignment step, ending with the final one.
    pub history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn populated(&self) -> usize {
        let mut seen = vec![false; self.centroids.len()];
        for &a in &self.assignment {
            seen[a] = true;
        }
        seen.into_iter().filter(|&s| s).count()
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against landing on a zero-weight tail through rounding
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[idx].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// k-means with k-means++ seeding drawn from `seed`.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansResult, ClusterError> {
    if k == 0 || k > points.len() {
        return Err(ClusterError::KExceedsPoints {
            k,
            n: points.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = plus_plus_init(points, k, &mut rng);
    Ok(lloyd(points, init, max_iter, tol))
}

/// Lloyd iterations from the given centroids until the largest centroid
/// move is below `tol` or `max_iter` is reached. An emptied cluster is
/// reseeded at the point farthest from its own centroid.
pub fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> KMeansResult {
    let k = centroids.len();
    let dim = points.first().map_or(0, Vec::len);
    let mut assignment = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut wcss = 0.0;
        for (p, a) in points.iter().zip(assignment.iter_mut()) {
            let (c, d) = nearest(p, &centroids);
            *a = c;
            wcss += d;
        }
        history.push(wcss);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| {
                if c == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|x| x / c as f64).collect()
                }
            })
            .collect();

        let mut taken = vec![false; points.len()];
        for empty in (0..k).filter(|&c| counts[c] == 0) {
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .map(|(i, p)| (i, sq_dist(p, &next[assignment[i]])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                taken[i] = true;
                next[empty] = points[i].clone();
            }
        }

        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < tol {
            break;
        }
    }

    let mut wcss = 0.0;
    for (p, a) in points.iter().zip(assignment.iter_mut()) {
        let (c, d) = nearest(p, &centroids);
        *a = c;
        wcss += d;
    }
    history.push(wcss);
    KMeansResult {
        assignment,
        centroids,
        wcss,
        history,
        iterations,
    }
}
