use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const EIGEN_TOL: f64 = 1e-9;
pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 100;
const EIGEN_MAX_ITER: usize = 10_000;

/// Cluster labels for a set of items. Labels are numbered by first appearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub items: Vec<String>,
    pub labels: Vec<usize>,
    pub num_clusters: usize,
    pub affinity: String,
}

impl ClusterAssignment {
    /// Replaces the item names, which default to row indices.
    pub fn with_items(mut self, items: Vec<String>) -> Result<Self> {
        if items.len() != self.labels.len() {
            return Err(Error::Argument(format!("{} names for {} items", items.len(), self.labels.len())));
        }
        self.items = items;
        Ok(self)
    }

    /// Members of each cluster, in item order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Fraction of items whose label agrees with `truth` under the best one-to-one
/// matching of cluster labels to truth labels.
pub fn best_match_agreement(labels: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(labels.len(), truth.len());
    if labels.is_empty() {
        return 1.0;
    }
    let k1 = labels.iter().max().map_or(0, |m| m + 1);
    let k2 = truth.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; k2]; k1];
    for (&a, &b) in labels.iter().zip(truth) {
        counts[a][b] += 1;
    }
    // Exhaustive search over injective maps; cluster counts here are small.
    fn best(row: usize, used: &mut Vec<bool>, counts: &[Vec<usize>]) -> usize {
        if row == counts.len() {
            return 0;
        }
        let mut top = best(row + 1, used, counts);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                top = top.max(counts[row][j] + best(row + 1, used, counts));
                used[j] = false;
            }
        }
        top
    }
    best(0, &mut vec![false; k2], &counts) as f64 / labels.len() as f64
}

fn cosine_affinity(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 1.0;
        }
        if norms[i] == 0.0 || norms[j] == 0.0 {
            return 0.0;
        }
        let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
        (dot / (norms[i] * norms[j])).max(0.0)
    })
}

/// Normalized spectral clustering with cosine affinity.
///
/// Embeds rows with the `k` eigenvectors of `I - D^-1/2 W D^-1/2` having the
/// smallest eigenvalues, normalizes each embedded row, then runs seeded k-means++.
pub fn spectral_cluster(features: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = features.len();
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 clusters, got {k}")));
    }
    if n < k {
        return Err(Error::Argument(format!("{n} items cannot form {k} clusters")));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|r| r.len() != dim) {
        return Err(Error::Argument("feature rows must share a positive dimension".into()));
    }
    if features.iter().any(|r| r.iter().any(|x| !x.is_finite())) {
        return Err(Error::Argument("non-finite feature value".into()));
    }
    if features.iter().all(|r| r == &features[0]) {
        return Err(Error::Degenerate("all feature rows are identical".into()));
    }

    let w = cosine_affinity(features);
    let d_inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / w.row(i).sum().sqrt()).collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - d_inv_sqrt[i] * w[(i, j)] * d_inv_sqrt[j]
    });
    let eig = SymmetricEigen::try_new(lap, EIGEN_TOL, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Degenerate("eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let embedded: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = order[..k].iter().map(|&j| eig.eigenvectors[(i, j)]).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.into_iter().map(|x| x / norm).collect()
            } else {
                row
            }
        })
        .collect();

    let labels = kmeans(&embedded, k, seed);
    Ok(ClusterAssignment {
        items: (0..n).map(|i| i.to_string()).collect(),
        labels: canonical_labels(&labels),
        num_clusters: k,
        affinity: "cosine similarity clamped at 0, symmetric normalized Laplacian".into(),
    })
}

fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best of `KMEANS_RESTARTS` k-means++ runs by within-cluster sum of squares.
fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let (inertia, labels) = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }

    let mut labels = vec![0; n];
    for iter in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let l = nearest(p, &centers).0;
            if l != labels[i] {
                labels[i] = l;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centers[labels[a]]).total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                    })
                    .unwrap_or(0);
                centers[j] = points[far].clone();
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (inertia, labels)
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
}

/// Clusters students by their rows of `S`.
pub fn student_clusters(params: &ModelParams, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let rows: Vec<Vec<f64>> = (0..params.num_students).map(|s| params.student_row(s).to_vec()).collect();
    spectral_cluster(&rows, k, seed)
}

/// Clusters the materials of `views` by their concept columns in `Q`. Items are named
/// `view:material` and ordered by view, then material.
pub fn material_clusters(params: &ModelParams, views: &[usize], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if views.is_empty() {
        return Err(Error::Argument("no views selected".into()));
    }
    let mut rows = Vec::new();
    let mut items = Vec::new();
    for &r in views {
        if r >= params.num_views() {
            return Err(Error::Argument(format!("view {r} out of range")));
        }
        for p in 0..params.num_materials[r] {
            rows.push(params.q_column(r, p));
            items.push(format!("{r}:{p}"));
        }
    }
    spectral_cluster(&rows, k, seed)?.with_items(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_groups() -> Vec<Vec<f64>> {
        let mut rows = Vec::new();
        for i in 0..12 {
            if i % 3 == 0 {
                rows.push(vec![1.0, 0.0, 0.0]);
            } else {
                rows.push(vec![0.0, 0.5, 0.5]);
            }
        }
        rows
    }

    #[test]
    fn orthogonal_groups_separate() {
        let rows = two_groups();
        let a = spectral_cluster(&rows, 2, 0).unwrap();
        let truth: Vec<usize> = (0..12).map(|i| usize::from(i % 3 != 0)).collect();
        assert_eq!(a.labels, truth);
        assert_eq!(best_match_agreement(&a.labels, &truth), 1.0);
    }

    #[test]
    fn singletons_when_k_equals_n() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let a = spectral_cluster(&rows, 3, 4).unwrap();
        assert_eq!(a.labels, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_input() {
        let same = vec![vec![0.2, 0.8]; 5];
        assert!(matches!(spectral_cluster(&same, 2, 0), Err(Error::Degenerate(_))));
        assert!(matches!(spectral_cluster(&two_groups(), 1, 0), Err(Error::Argument(_))));
        assert!(matches!(spectral_cluster(&two_groups()[..1], 2, 0), Err(Error::Argument(_))));
        assert!(spectral_cluster(&[vec![1.0], vec![1.0, 2.0]], 2, 0).is_err());
    }

    #[test]
    fn agreement_uses_best_matching() {
        assert_eq!(best_match_agreement(&[1, 1, 0, 0], &[0, 0, 1, 1]), 1.0);
        assert_eq!(best_match_agreement(&[0, 0, 0, 0], &[0, 0, 1, 1]), 0.5);
        assert_eq!(best_match_agreement(&[0, 1, 2, 0], &[0, 0, 1, 1]), 0.5);
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    fn blobs() -> impl Strategy<Value = Vec<Vec<f64>>> {
        // Three well-separated directions with small nonnegative jitter.
        prop::collection::vec((0usize..3, prop::collection::vec(0.0..0.05f64, 3)), 6..20).prop_filter_map(
            "need every group",
            |spec| {
                let groups: std::collections::BTreeSet<usize> = spec.iter().map(|(g, _)| *g).collect();
                (groups.len() == 3).then(|| {
                    spec.into_iter()
                        .map(|(g, jitter)| {
                            let mut row = jitter;
                            row[g] += 1.0;
                            row
                        })
                        .collect()
                })
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn partition_invariant_under_permutation_and_scale(rows in blobs(), scale in 0.1..50.0f64, rot in 0usize..20) {
            let base = spectral_cluster(&rows, 3, 1).unwrap();
            let n = rows.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let p = spectral_cluster(&permuted, 3, 1).unwrap();
            let mut back = vec![0; n];
            for (pos, &i) in perm.iter().enumerate() {
                back[i] = p.labels[pos];
            }
            prop_assert!(same_partition(&base.labels, &back));
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
            prop_assert!(same_partition(&base.labels, &spectral_cluster(&scaled, 3, 1).unwrap().labels));
            prop_assert!(base.labels.iter().all(|&l| l < base.num_clusters));
        }
    }
}
