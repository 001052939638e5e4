//! k-means++ seeding, Lloyd iterations and hierarchical k-means.
//!
//! Shared by the k-means LSH buckets and the Nyström landmark selection.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// `k x d` cluster centers.
    pub centroids: Array2<f64>,
    /// Cluster index per input row.
    pub labels: Vec<usize>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }
}

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Picks `k` row indices by D² sampling. The first index is uniform; each
/// further index is drawn proportionally to the squared distance to the
/// closest already chosen row. Rows are never picked twice; once every
/// remaining row coincides with a chosen one the rest are drawn uniformly.
pub fn kmeans_pp_indices<R: Rng>(data: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.nrows();
    assert!(k <= n, "cannot pick {k} distinct rows out of {n}");
    let mut chosen = Vec::with_capacity(k);
    if k == 0 {
        return chosen;
    }
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(first))).collect();
    while chosen.len() < k {
        let total: f64 = (0..n).filter(|&i| !taken[i]).map(|i| d2[i]).sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !taken[i] && d2[i] > 0.0) {
                pick = Some(i);
                target -= d2[i];
                if target < 0.0 {
                    break;
                }
            }
            pick.expect("positive total implies a candidate")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for i in 0..n {
            let d = sq_dist(data.row(i), data.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

fn assign(data: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, row) in data.rows().into_iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(row, center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if labels[i] != best {
            labels[i] = best;
            changed = true;
        }
    }
    changed
}

/// Re-seeds every empty cluster with the point farthest from its own
/// centroid (taken only from clusters with more than one member).
fn fix_empty(data: ArrayView2<'_, f64>, centroids: &mut Array2<f64>, labels: &mut [usize]) {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &l) in labels.iter().enumerate() {
            if counts[l] < 2 {
                continue;
            }
            let d = sq_dist(data.row(i), centroids.row(l));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        counts[labels[i]] -= 1;
        counts[c] = 1;
        labels[i] = c;
        centroids.row_mut(c).assign(&data.row(i));
    }
}

fn update_centroids(data: ArrayView2<'_, f64>, centroids: &mut Array2<f64>, labels: &[usize]) {
    let k = centroids.nrows();
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    let mut counts = vec![0usize; k];
    for (row, &l) in data.rows().into_iter().zip(labels) {
        let mut s = sums.row_mut(l);
        s += &row;
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            let mean = &sums.row(c) / counts[c] as f64;
            centroids.row_mut(c).assign(&mean);
        }
    }
}

/// Runs `iters` Lloyd steps from the given centers. Stops early once the
/// assignment is stable. Every cluster is non-empty on return whenever the
/// data has at least `k` rows.
pub fn lloyd(data: ArrayView2<'_, f64>, init: Array2<f64>, iters: usize) -> Clustering {
    let mut centroids = init;
    let mut labels = vec![usize::MAX; data.nrows()];
    assign(data, &centroids, &mut labels);
    fix_empty(data, &mut centroids, &mut labels);
    for _ in 0..iters {
        update_centroids(data, &mut centroids, &labels);
        let changed = assign(data, &centroids, &mut labels);
        fix_empty(data, &mut centroids, &mut labels);
        if !changed {
            break;
        }
    }
    Clustering { centroids, labels }
}

/// k-means with k-means++ seeding.
pub fn kmeans(data: ArrayView2<'_, f64>, k: usize, iters: usize, seed: u64) -> Result<Clustering> {
    if data.nrows() == 0 {
        return Err(Error::Empty("k-means input"));
    }
    if k == 0 || k > data.nrows() {
        return Err(Error::InvalidParameter(format!(
            "k-means needs 1 <= k <= {} clusters, got {k}",
            data.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = kmeans_pp_indices(data, k, &mut rng);
    let init = data.select(Axis(0), &idx);
    Ok(lloyd(data, init, iters))
}

/// Hierarchical k-means: repeatedly splits the leaf with the largest
/// within-cluster sum of squares into at most `branching` children until
/// `leaves` leaves exist. Returns the leaf index of every row.
pub fn hierarchical_kmeans(
    data: ArrayView2<'_, f64>,
    leaves: usize,
    branching: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::Empty("k-means input"));
    }
    if leaves == 0 || leaves > n {
        return Err(Error::InvalidParameter(format!(
            "hierarchical k-means needs 1 <= leaves <= {n}, got {leaves}"
        )));
    }
    if branching < 2 {
        return Err(Error::InvalidParameter("branching must be at least 2".into()));
    }
    let sse = |members: &[usize]| -> f64 {
        let sub = data.select(Axis(0), members);
        let mean = sub.mean_axis(Axis(0)).expect("non-empty leaf");
        sub.rows().into_iter().map(|r| sq_dist(r, mean.view())).sum()
    };
    let mut nodes: Vec<(Vec<usize>, f64)> = vec![((0..n).collect(), 0.0)];
    nodes[0].1 = sse(&nodes[0].0);
    let mut split_no = 0u64;
    while nodes.len() < leaves {
        let pick = nodes
            .iter()
            .enumerate()
            .filter(|(_, (m, _))| m.len() >= 2)
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("leaves <= n guarantees a splittable leaf");
        let (members, _) = nodes.remove(pick);
        let k = branching.min(leaves - nodes.len()).min(members.len());
        let sub = data.select(Axis(0), &members);
        let child_seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(split_no + 1));
        split_no += 1;
        let clustering = kmeans(sub.view(), k, iters, child_seed)?;
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (local, &label) in clustering.labels.iter().enumerate() {
            children[label].push(members[local]);
        }
        for (off, child) in children.into_iter().enumerate() {
            let s = sse(&child);
            nodes.insert(pick + off, (child, s));
        }
    }
    let mut labels = vec![0usize; n];
    for (leaf, (members, _)) in nodes.iter().enumerate() {
        for &i in members {
            labels[i] = leaf;
        }
    }
    Ok(labels)
}
