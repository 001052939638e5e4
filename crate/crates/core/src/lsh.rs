//! Locality-sensitive hashing for picking the "near" pairs that make up the
//! sparse kernel pattern.
//!
//! Two schemes are available. Cross-polytope hashing projects each point with
//! a Gaussian matrix and takes the argmax over the projection and its
//! negation; `r` such functions form a band and `B` bands are OR-ed together.
//! k-means hashing clusters `X_p ∪ X_q` and uses the clusters as buckets,
//! optionally via hierarchical k-means for large inputs.

use std::io::Write;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::kmeans;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LshScheme {
    CrossPolytope,
    #[default]
    Kmeans,
    HierarchicalKmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct LshConfig {
    pub scheme: LshScheme,
    /// Number of OR-ed hash bands (`B`).
    pub bands: usize,
    /// Hash functions AND-ed within a band (`r`).
    pub rows_per_band: usize,
    /// Buckets per hash function (`b`). For k-means schemes this is the
    /// number of clusters.
    pub buckets_per_fn: usize,
    pub kmeans_iters: usize,
    pub branching: usize,
    pub seed: u64,
}

impl Default for LshConfig {
    fn default() -> Self {
        Self {
            scheme: LshScheme::Kmeans,
            bands: 1,
            rows_per_band: 1,
            buckets_per_fn: 2,
            kmeans_iters: 10,
            branching: 8,
            seed: 0,
        }
    }
}

impl LshConfig {
    pub fn cross_polytope(bands: usize, rows_per_band: usize, buckets: usize, seed: u64) -> Self {
        Self {
            scheme: LshScheme::CrossPolytope,
            bands,
            rows_per_band,
            buckets_per_fn: buckets,
            seed,
            ..Self::default()
        }
    }

    pub fn kmeans(buckets: usize, seed: u64) -> Self {
        Self {
            scheme: LshScheme::Kmeans,
            buckets_per_fn: buckets,
            seed,
            ..Self::default()
        }
    }

    pub fn hierarchical_kmeans(buckets: usize, branching: usize, seed: u64) -> Self {
        Self {
            scheme: LshScheme::HierarchicalKmeans,
            buckets_per_fn: buckets,
            branching,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.rows_per_band == 0 {
            return Err(Error::InvalidParameter("bands and rows_per_band must be positive".into()));
        }
        if self.buckets_per_fn < 2 && self.scheme == LshScheme::CrossPolytope {
            return Err(Error::InvalidParameter("cross-polytope needs at least 2 buckets".into()));
        }
        if self.buckets_per_fn == 0 {
            return Err(Error::InvalidParameter("bucket count must be positive".into()));
        }
        if self.scheme == LshScheme::CrossPolytope {
            if !self.buckets_per_fn.is_multiple_of(2) {
                return Err(Error::InvalidParameter(format!(
                    "cross-polytope bucket count must be even, got {}",
                    self.buckets_per_fn
                )));
            }
            let ids = (self.buckets_per_fn as u64).checked_pow(self.rows_per_band as u32);
            if ids.is_none() {
                return Err(Error::InvalidParameter("b^r overflows the composite bucket id".into()));
            }
        }
        if self.scheme == LshScheme::HierarchicalKmeans && self.branching < 2 {
            return Err(Error::InvalidParameter("branching must be at least 2".into()));
        }
        Ok(())
    }

    /// Non-fatal configuration warnings.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.scheme != LshScheme::CrossPolytope && (self.bands > 1 || self.rows_per_band > 1) {
            out.push(format!(
                "k-means LSH with {} bands x {} rows: samples are highly correlated across bands",
                self.bands, self.rows_per_band
            ));
        }
        out
    }
}

/// Composite bucket id of every point, one vector per band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketAssignment {
    pub bands: Vec<Vec<u64>>,
}

impl BucketAssignment {
    pub fn num_points(&self) -> usize {
        self.bands.first().map_or(0, Vec::len)
    }
}

/// Cross-polytope hash family: one `d x b/2` projection per hash function,
/// laid out band-major.
#[derive(Debug, Clone)]
pub struct CrossPolytopeHasher {
    projections: Vec<Array2<f64>>,
    bands: usize,
    rows_per_band: usize,
    buckets: usize,
}

impl CrossPolytopeHasher {
    /// Draws all projections i.i.d. standard normal from the config seed.
    pub fn random(dim: usize, cfg: &LshConfig) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 {
            return Err(Error::Empty("cross-polytope hashing of 0-dimensional points"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let half = cfg.buckets_per_fn / 2;
        let projections = (0..cfg.bands * cfg.rows_per_band)
            .map(|_| Array2::from_shape_simple_fn((dim, half), || StandardNormal.sample(&mut rng)))
            .collect();
        Ok(Self {
            projections,
            bands: cfg.bands,
            rows_per_band: cfg.rows_per_band,
            buckets: cfg.buckets_per_fn,
        })
    }

    /// Uses caller-provided projections (`bands * rows_per_band` of them,
    /// each `d x b/2`).
    pub fn from_projections(projections: Vec<Array2<f64>>, bands: usize, rows_per_band: usize) -> Result<Self> {
        if projections.len() != bands * rows_per_band || projections.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "expected {} projections, got {}",
                bands * rows_per_band,
                projections.len()
            )));
        }
        let shape = projections[0].dim();
        if shape.0 == 0 || projections.iter().any(|r| r.dim() != shape) {
            return Err(Error::InvalidParameter("projections must share a non-empty shape".into()));
        }
        Ok(Self {
            projections,
            bands,
            rows_per_band,
            buckets: 2 * shape.1,
        })
    }

    /// Bucket of a single hash function: argmax of `[xR, -xR]`, first index
    /// on ties.
    pub fn hash_fn(&self, f: usize, x: ArrayView1<'_, f64>) -> usize {
        let proj = x.dot(&self.projections[f]);
        let half = proj.len();
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for k in 0..2 * half {
            let v = if k < half { proj[k] } else { -proj[k - half] };
            if v > best_v {
                best_v = v;
                best = k;
            }
        }
        best
    }

    /// Mixed-radix composite id of band `band`.
    pub fn hash_band(&self, band: usize, x: ArrayView1<'_, f64>) -> u64 {
        let mut id = 0u64;
        for r in 0..self.rows_per_band {
            id = id * self.buckets as u64 + self.hash_fn(band * self.rows_per_band + r, x) as u64;
        }
        id
    }

    pub fn hash(&self, x: &PointSet) -> Result<BucketAssignment> {
        if x.dim() != self.projections[0].nrows() {
            return Err(Error::DimensionMismatch(self.projections[0].nrows(), x.dim()));
        }
        let bands = (0..self.bands)
            .map(|b| {
                (0..x.len())
                    .into_par_iter()
                    .map(|i| self.hash_band(b, x.point(i)))
                    .collect()
            })
            .collect();
        Ok(BucketAssignment { bands })
    }
}

pub fn hash_cross_polytope(x: &PointSet, cfg: &LshConfig) -> Result<BucketAssignment> {
    if cfg.scheme != LshScheme::CrossPolytope {
        return Err(Error::InvalidParameter("config scheme is not cross-polytope".into()));
    }
    CrossPolytopeHasher::random(x.dim(), cfg)?.hash(x)
}

/// Clusters `X_p ∪ X_q` and returns the bucket ids of both sets. One
/// clustering (with its own seed) is computed per band.
pub fn hash_kmeans(p: &PointSet, q: &PointSet, cfg: &LshConfig) -> Result<(BucketAssignment, BucketAssignment)> {
    if cfg.scheme == LshScheme::CrossPolytope {
        return Err(Error::InvalidParameter("config scheme is not k-means".into()));
    }
    cfg.validate()?;
    let union = p.union(q)?;
    let total = union.len();
    if cfg.buckets_per_fn > total {
        return Err(Error::InvalidParameter(format!(
            "{} buckets requested for {total} points",
            cfg.buckets_per_fn
        )));
    }
    let mut bp = Vec::with_capacity(cfg.bands);
    let mut bq = Vec::with_capacity(cfg.bands);
    for band in 0..cfg.bands {
        let mut ids = vec![0u64; total];
        for r in 0..cfg.rows_per_band {
            let seed = cfg.seed.wrapping_add((band * cfg.rows_per_band + r) as u64);
            let labels = match cfg.scheme {
                LshScheme::Kmeans => {
                    kmeans::kmeans(union.points(), cfg.buckets_per_fn, cfg.kmeans_iters, seed)?.labels
                }
                LshScheme::HierarchicalKmeans => kmeans::hierarchical_kmeans(
                    union.points(),
                    cfg.buckets_per_fn,
                    cfg.branching,
                    cfg.kmeans_iters,
                    seed,
                )?,
                LshScheme::CrossPolytope => unreachable!(),
            };
            for (id, l) in ids.iter_mut().zip(labels) {
                *id = *id * cfg.buckets_per_fn as u64 + l as u64;
            }
        }
        bq.push(ids.split_off(p.len()));
        bp.push(ids);
    }
    Ok((BucketAssignment { bands: bp }, BucketAssignment { bands: bq }))
}

/// Hashes both sets with whichever scheme `cfg` names.
pub fn hash_pair(p: &PointSet, q: &PointSet, cfg: &LshConfig) -> Result<(BucketAssignment, BucketAssignment)> {
    match cfg.scheme {
        LshScheme::CrossPolytope => {
            if p.dim() != q.dim() {
                return Err(Error::DimensionMismatch(p.dim(), q.dim()));
            }
            let hasher = CrossPolytopeHasher::random(p.dim(), cfg)?;
            Ok((hasher.hash(p)?, hasher.hash(q)?))
        }
        _ => hash_kmeans(p, q, cfg),
    }
}

/// Sorted, duplicate-free set of `(row, col)` index pairs with row- and
/// column-major indexes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborPairs {
    n: usize,
    m: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    // column-major view: entries of column j are csc_perm[col_ptr[j]..col_ptr[j+1]]
    col_ptr: Vec<usize>,
    csc_rows: Vec<u32>,
    csc_perm: Vec<usize>,
}

impl NeighborPairs {
    /// Builds the pattern from arbitrary pairs, sorting and deduplicating.
    pub fn from_pairs<I: IntoIterator<Item = (usize, usize)>>(n: usize, m: usize, pairs: I) -> Result<Self> {
        let mut v: Vec<(u32, u32)> = Vec::new();
        for (i, j) in pairs {
            if i >= n || j >= m {
                return Err(Error::InvalidParameter(format!("pair ({i}, {j}) outside {n} x {m}")));
            }
            v.push((i as u32, j as u32));
        }
        v.par_sort_unstable();
        v.dedup();
        Ok(Self::from_sorted(n, m, v))
    }

    fn from_sorted(n: usize, m: usize, v: Vec<(u32, u32)>) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _) in &v {
            row_ptr[i as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols: Vec<u32> = v.iter().map(|&(_, j)| j).collect();
        let mut col_ptr = vec![0usize; m + 1];
        for &j in &cols {
            col_ptr[j as usize + 1] += 1;
        }
        for j in 0..m {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut csc_rows = vec![0u32; cols.len()];
        let mut csc_perm = vec![0usize; cols.len()];
        for (k, &(i, j)) in v.iter().enumerate() {
            let slot = fill[j as usize];
            csc_rows[slot] = i;
            csc_perm[slot] = k;
            fill[j as usize] += 1;
        }
        Self {
            n,
            m,
            row_ptr,
            cols,
            col_ptr,
            csc_rows,
            csc_perm,
        }
    }

    pub fn full(n: usize, m: usize) -> Self {
        Self::from_sorted(
            n,
            m,
            (0..n as u32).flat_map(|i| (0..m as u32).map(move |j| (i, j))).collect(),
        )
    }

    pub fn empty(n: usize, m: usize) -> Self {
        Self::from_sorted(n, m, Vec::new())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn cols(&self) -> &[u32] {
        &self.cols
    }

    /// Column indices of row `i`.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn col_count(&self, j: usize) -> usize {
        self.col_ptr[j + 1] - self.col_ptr[j]
    }

    /// `(row, storage index)` pairs of column `j`.
    pub fn col_entries(&self, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.csc_rows[r.clone()]
            .iter()
            .zip(&self.csc_perm[r])
            .map(|(&i, &k)| (i as usize, k))
    }

    /// All pairs in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j as usize)))
    }

    /// Storage index of `(i, j)` if present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = self.row(i);
        row.binary_search(&(j as u32)).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.position(i, j).is_some()
    }

    pub fn union(&self, other: &NeighborPairs) -> Result<NeighborPairs> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Self::from_pairs(self.n, self.m, self.iter().chain(other.iter()))
    }

    pub fn mean_row_degree(&self) -> f64 {
        self.len() as f64 / self.n as f64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["i", "j"])?;
        for (i, j) in self.iter() {
            wr.write_record([i.to_string(), j.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// A pair `(i, j)` is a neighbor if some band assigns both points the same
/// composite bucket. Pairs are extracted per bucket (sort by id, then emit
/// the cross product of matching runs), never by comparing all pairs.
pub fn neighbor_pairs(bp: &BucketAssignment, bq: &BucketAssignment) -> Result<NeighborPairs> {
    if bp.bands.len() != bq.bands.len() {
        return Err(Error::InvalidParameter(format!(
            "band count mismatch: {} vs {}",
            bp.bands.len(),
            bq.bands.len()
        )));
    }
    let n = bp.num_points();
    let m = bq.num_points();
    let mut all: Vec<(u32, u32)> = Vec::new();
    for (band_p, band_q) in bp.bands.iter().zip(&bq.bands) {
        let mut sp: Vec<(u64, u32)> = band_p.iter().enumerate().map(|(i, &b)| (b, i as u32)).collect();
        let mut sq: Vec<(u64, u32)> = band_q.iter().enumerate().map(|(j, &b)| (b, j as u32)).collect();
        sp.sort_unstable();
        sq.sort_unstable();
        let (mut a, mut b) = (0, 0);
        while a < sp.len() && b < sq.len() {
            let (ka, kb) = (sp[a].0, sq[b].0);
            if ka < kb {
                a += 1;
            } else if kb < ka {
                b += 1;
            } else {
                let a_end = a + sp[a..].iter().take_while(|e| e.0 == ka).count();
                let b_end = b + sq[b..].iter().take_while(|e| e.0 == ka).count();
                for &(_, i) in &sp[a..a_end] {
                    for &(_, j) in &sq[b..b_end] {
                        all.push((i, j));
                    }
                }
                a = a_end;
                b = b_end;
            }
        }
    }
    all.par_sort_unstable();
    all.dedup();
    Ok(NeighborPairs::from_sorted(n, m, all))
}

/// Convenience: hash both sets and extract neighbor pairs.
pub fn lsh_pairs(p: &PointSet, q: &PointSet, cfg: &LshConfig) -> Result<NeighborPairs> {
    let (bp, bq) = hash_pair(p, q, cfg)?;
    neighbor_pairs(&bp, &bq)
}

/// Pattern of all pairs within Euclidean distance `radius` (brute force;
/// meant for tests and small studies).
pub fn radius_pairs(p: &PointSet, q: &PointSet, radius: f64) -> Result<NeighborPairs> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(p.dim(), q.dim()));
    }
    let r2 = radius * radius;
    let pairs = (0..p.len()).flat_map(|i| {
        (0..q.len()).filter_map(move |j| (kmeans::sq_dist(p.point(i), q.point(j)) <= r2).then_some((i, j)))
    });
    NeighborPairs::from_pairs(p.len(), q.len(), pairs)
}

/// Buckets needed per function so that the expected row degree is about
/// `neighbors`: `b^r = min(n, m) / neighbors`.
pub fn buckets_for_degree(n: usize, m: usize, neighbors: f64, rows_per_band: usize, even: bool) -> usize {
    let target = (n.min(m) as f64 / neighbors.max(1.0)).max(1.0);
    let b = target.powf(1.0 / rows_per_band as f64).round() as usize;
    let b = b.max(if even { 2 } else { 1 });
    if even && b % 2 == 1 {
        b + 1
    } else {
        b
    }
}
