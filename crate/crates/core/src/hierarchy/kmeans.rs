//! Lloyd's k-means with k-means++ seeding and best-of-n restarts.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id per point, relabeled in order of first appearance.
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
    /// Restart that produced this clustering.
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding landing on a zero-weight tail point
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap();
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn means(points: &[Vec<f64>], assignment: &[usize], k: usize, prev: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(j, (s, c))| {
            if c == 0 {
                prev[j].clone()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect()
}

/// Moves the point farthest from its centroid (among clusters that can
/// spare one) into each empty cluster.
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&a| counts[a] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centers[assignment[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("k < n guarantees a donor cluster");
        assignment[i] = empty;
        centers[empty] = points[i].clone();
    }
}

fn wcss(points: &[Vec<f64>], assignment: &[usize], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centers[a]))
        .sum()
}

fn single_run(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig, mut rng: ChaCha8Rng) -> (Vec<usize>, f64) {
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    repair_empty(points, &mut assignment, &mut centers);
    for _ in 0..cfg.max_iters {
        centers = means(points, &assignment, k, &centers);
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        repair_empty(points, &mut next, &mut centers);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    centers = means(points, &assignment, k, &centers);
    let score = wcss(points, &assignment, &centers);
    (assignment, score)
}

/// Relabels cluster ids in order of first appearance.
pub(crate) fn canonical_labels(assignment: &[usize]) -> Vec<usize> {
    let mut remap: Vec<Option<usize>> = vec![None; assignment.iter().max().map_or(0, |m| m + 1)];
    let mut next = 0;
    assignment
        .iter()
        .map(|&a| {
            *remap[a].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Clusters the rows of `points` into `k` groups.
///
/// Restart `r` draws from a ChaCha stream `r` of `seed`; the winner is the
/// lowest (WCSS, restart) pair, so the result does not depend on how
/// restarts are scheduled.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<Clustering> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidClusterCount {
            requested: k,
            num_points: n,
        });
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteData {
            index: points.iter().position(|x| !x.is_finite()).unwrap(),
        });
    }
    let rows: Vec<Vec<f64>> = points.row_iter().map(|r| r.iter().copied().collect()).collect();
    let runs: Vec<(Vec<usize>, f64)> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            single_run(&rows, k, cfg, rng)
        })
        .collect();
    let (restart, (assignment, score)) = runs
        .into_iter()
        .enumerate()
        .min_by(|(ra, (_, a)), (rb, (_, b))| a.total_cmp(b).then(ra.cmp(rb)))
        .unwrap();
    Ok(Clustering {
        assignment: canonical_labels(&assignment),
        wcss: score,
        restart,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_relabel() {
        assert_eq!(canonical_labels(&[2, 2, 0, 1, 0]), vec![0, 0, 1, 2, 1]);
    }

    #[test]
    fn two_obvious_groups() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.1, 0.0, 10.0, 10.0, 10.1, 10.0]);
        let c = kmeans(&pts, 2, 5, &KMeansConfig::default()).unwrap();
        assert_eq!(c.assignment, vec![0, 0, 1, 1]);
        assert!((c.wcss - 0.01).abs() < 1e-12);
    }

    #[test]
    fn duplicates_still_fill_every_cluster() {
        let pts = DMatrix::from_row_slice(5, 1, &[1.0, 1.0, 1.0, 1.0, 2.0]);
        let c = kmeans(&pts, 3, 0, &KMeansConfig::default()).unwrap();
        let mut used = c.assignment.clone();
        used.sort();
        used.dedup();
        assert_eq!(used, vec![0, 1, 2]);
    }

    #[test]
    fn too_many_clusters() {
        let pts = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(
            kmeans(&pts, 3, 0, &KMeansConfig::default()),
            Err(Error::InvalidClusterCount {
                requested: 3,
                num_points: 2
            })
        ));
    }
}
