//! Plan comparison metrics, kernel-approximation studies and runtime
//! sweeps.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{cluster_boundaries, uniform_ball, ClusterLayout};
use crate::error::{Error, Result};
use crate::experiment::{build_operator, Budget, OperatorSpec, Variant};
use crate::geometry::{build_cost, build_kernel, CostFunction, Marginals, PointSet};
use crate::lsh::{buckets_for_degree, lsh_pairs, LshConfig, NeighborPairs};
use crate::nystrom::{build_factors, select_landmarks, LandmarkMethod, LandmarkSet};
use crate::sinkhorn::{iteration_bound, sinkhorn, KernelOperator, Plan, SinkhornOptions};
use crate::sparse::{build_correction, build_sparse};

/// Fraction of entries that make up the "largest entries" set for IoU.
pub const TOP_FRACTION: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanComparison {
    pub rel_err_d: f64,
    pub pcc: f64,
    pub iou: f64,
}

/// Compares an approximate plan (densified) against a dense reference.
pub fn compare_plans(reference: &Array2<f64>, approx: &Plan, d_ref: f64, d_approx: f64) -> Result<PlanComparison> {
    compare_dense(reference, &approx.densify(), d_ref, d_approx)
}

pub fn compare_dense(reference: &Array2<f64>, approx: &Array2<f64>, d_ref: f64, d_approx: f64) -> Result<PlanComparison> {
    if reference.dim() != approx.dim() {
        return Err(Error::ShapeMismatch {
            expected: reference.dim(),
            got: approx.dim(),
        });
    }
    Ok(PlanComparison {
        rel_err_d: (d_approx - d_ref).abs() / d_ref.abs(),
        pcc: pearson(reference, approx)?,
        iou: top_iou(reference, approx),
    })
}

/// Pearson correlation over all entries.
pub fn pearson(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    let n = a.len() as f64;
    if a.is_empty() {
        return Err(Error::Empty("plan"));
    }
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Row-major indices of the `k` largest entries, ties broken by row then
/// column.
pub fn top_entries(a: &Array2<f64>, k: usize) -> Vec<usize> {
    let flat: Vec<f64> = a.iter().copied().collect();
    let mut idx: Vec<usize> = (0..flat.len()).collect();
    let k = k.min(idx.len());
    let cmp = |x: &usize, y: &usize| flat[*y].total_cmp(&flat[*x]).then(x.cmp(y));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Jaccard similarity of the top `ceil(0.001 n m)` entry sets.
pub fn top_iou(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let k = ((TOP_FRACTION * a.len() as f64).ceil() as usize).max(1);
    let ta = top_entries(a, k);
    let tb = top_entries(b, k);
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < ta.len() && j < tb.len() {
        match ta[i].cmp(&tb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = ta.len() + tb.len() - inter;
    inter as f64 / union as f64
}

/// Generalized KL divergence `sum P log(P/Q) - P + Q`, which also covers
/// plans of unequal mass. Infinite when `Q` misses mass that `P` has.
pub fn kl_divergence(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&a, &b)| {
            if a <= 0.0 {
                b
            } else if b <= 0.0 {
                f64::INFINITY
            } else {
                a * (a / b).ln() - a + b
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub max: f64,
    pub mean: f64,
}

pub fn error_stats(exact: &Array2<f64>, approx: &Array2<f64>) -> ErrorStats {
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for (a, b) in exact.iter().zip(approx.iter()) {
        let e = (a - b).abs();
        max = max.max(e);
        sum += e;
    }
    ErrorStats {
        max,
        mean: sum / exact.len().max(1) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheckReport {
    pub scenario: String,
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub sparse: ErrorStats,
    pub nystrom: ErrorStats,
    pub lcn: ErrorStats,
    /// `max |K - K_LCN|` outside the correction pattern.
    pub lcn_residual: f64,
    /// `e^{-(D - 2r)/lambda}` for clustered data.
    pub predicted_sparse_max: Option<f64>,
    /// `1 - e^{-2r/lambda}` for clustered data.
    pub predicted_nystrom_intra: Option<f64>,
    /// Worst Nyström error over pairs from the same cluster.
    pub measured_nystrom_intra: Option<f64>,
    /// `2 e^{-(D - 2r)/lambda}` for clustered data.
    pub lcn_bound: Option<f64>,
    /// Largest distance between any two samples.
    pub rho: f64,
    pub eps: f64,
    /// `min(1, eps / (50 (rho + lambda log(lambda n / eps))))`.
    pub eps_prime: f64,
    /// Kernel accuracy required for the distance guarantee:
    /// `eps' / 2 * e^{-rho / lambda}`.
    pub kernel_tolerance: f64,
    pub iterations_observed: usize,
    pub iteration_bound: f64,
    pub checks: Vec<Check>,
}

impl TheoremCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct ClusteredStudy {
    pub layout: ClusterLayout,
    pub lambda: f64,
    /// Boundary samples per cluster (the `2d` axis extremes included).
    pub per_cluster: usize,
    /// Sinkhorn tolerance for the iteration-bound check.
    pub eps: f64,
    pub seed: u64,
}

impl Default for ClusteredStudy {
    fn default() -> Self {
        Self {
            layout: ClusterLayout {
                dim: 2,
                clusters: 4,
                separation: 10.0,
                radius: 0.5,
                box_size: None,
            },
            lambda: 1.0,
            per_cluster: 64,
            eps: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct ManifoldStudy {
    pub n: usize,
    pub dim: usize,
    pub lambda: f64,
    pub landmarks: usize,
    pub neighbors: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for ManifoldStudy {
    fn default() -> Self {
        Self {
            n: 200,
            dim: 3,
            lambda: 0.1,
            landmarks: 10,
            neighbors: 10.0,
            eps: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    Clustered(ClusteredStudy),
    UniformManifold(ManifoldStudy),
}

fn max_pairwise_distance(p: &PointSet, q: &PointSet) -> f64 {
    let union = p.union(q).expect("dimensions checked by the caller");
    let x = union.points();
    let mut best: f64 = 0.0;
    for i in 0..x.nrows() {
        for j in i + 1..x.nrows() {
            best = best.max(crate::kmeans::sq_dist(x.row(i), x.row(j)));
        }
    }
    best.sqrt()
}

struct Approximations {
    exact: Array2<f64>,
    sparse: Array2<f64>,
    nystrom: Array2<f64>,
    lcn: Array2<f64>,
    pattern: NeighborPairs,
    sparse_op: KernelOperator,
}

fn approximations(
    p: &PointSet,
    q: &PointSet,
    pairs: NeighborPairs,
    landmarks: &LandmarkSet,
    lambda: f64,
) -> Result<Approximations> {
    let cost = CostFunction::Euclidean;
    let exact = build_kernel(&build_cost(p, q, cost)?, lambda)?.kernel();
    let sp = build_sparse(p, q, &pairs, cost, lambda)?;
    let factors = build_factors(p, q, landmarks, cost, lambda)?;
    let correction = build_correction(&sp, &factors)?;
    let nystrom = factors.densify();
    let lcn = &nystrom + &correction.densify();
    Ok(Approximations {
        exact,
        sparse: sp.densify(),
        nystrom,
        lcn,
        pattern: pairs,
        sparse_op: KernelOperator::sparse(sp),
    })
}

fn residual_off_pattern(a: &Approximations) -> f64 {
    let mut worst: f64 = 0.0;
    for ((i, j), e) in a.exact.indexed_iter() {
        if !a.pattern.contains(i, j) {
            worst = worst.max((e - a.lcn[[i, j]]).abs());
        }
    }
    worst
}

fn eps_prime(eps: f64, rho: f64, lambda: f64, n: usize) -> f64 {
    let denom = 50.0 * (rho + lambda * (lambda * n as f64 / eps).ln());
    (eps / denom).min(1.0)
}

/// Errors of the three kernel approximations against the dense kernel,
/// together with the closed-form predictions where they exist.
pub fn kernel_error_study(scenario: &Scenario) -> Result<TheoremCheckReport> {
    match scenario {
        Scenario::Clustered(s) => clustered_study(s),
        Scenario::UniformManifold(s) => manifold_study(s),
    }
}

fn clustered_study(s: &ClusteredStudy) -> Result<TheoremCheckReport> {
    let l = &s.layout;
    l.validate()?;
    if l.radius <= 0.0 || l.radius / l.separation > 0.1 {
        return Err(Error::Infeasible(format!(
            "clustered study needs 0 < r/D <= 0.1, got r = {}, D = {}",
            l.radius, l.separation
        )));
    }
    if s.per_cluster < 2 * l.dim {
        return Err(Error::InvalidParameter(format!(
            "need at least {} samples per cluster to include the axis extremes",
            2 * l.dim
        )));
    }
    let lambda = s.lambda;
    let centers = l.grid_centers()?;
    let x = cluster_boundaries(&centers, s.per_cluster, l.radius, s.seed)?;
    let n = x.len();
    let pairs = lsh_pairs(&x, &x, &LshConfig::kmeans(l.clusters, s.seed))?;
    let landmarks = LandmarkSet::explicit(centers.clone())?;
    let a = approximations(&x, &x, pairs, &landmarks, lambda)?;

    let cluster = |i: usize| i / s.per_cluster;
    let mut intra: f64 = 0.0;
    for ((i, j), e) in a.exact.indexed_iter() {
        if cluster(i) == cluster(j) {
            intra = intra.max((e - a.nystrom[[i, j]]).abs());
        }
    }
    let sparse = error_stats(&a.exact, &a.sparse);
    let nystrom = error_stats(&a.exact, &a.nystrom);
    let lcn = error_stats(&a.exact, &a.lcn);
    let predicted_sparse = (-(l.separation - 2.0 * l.radius) / lambda).exp();
    let predicted_intra = 1.0 - (-2.0 * l.radius / lambda).exp();
    let lcn_bound = 2.0 * predicted_sparse;

    let rho = max_pairwise_distance(&x, &x);
    let marg = Marginals::uniform(n, n);
    let run = sinkhorn(&a.sparse_op, &marg, &SinkhornOptions::with_tol(s.eps))?;
    let bound = iteration_bound(&a.sparse_op, &marg, s.eps)?;
    let ep = eps_prime(s.eps, rho, lambda, n);

    let rel = |measured: f64, predicted: f64| (measured - predicted).abs() <= 0.1 * predicted;
    let checks = vec![
        Check {
            name: "sparse max error matches e^{-(D-2r)/lambda} within 10%".into(),
            passed: rel(sparse.max, predicted_sparse),
        },
        Check {
            name: "Nystrom worst intra-cluster error matches 1 - e^{-2r/lambda} within 10%".into(),
            passed: rel(intra, predicted_intra),
        },
        Check {
            name: "LCN max error below Nystrom max error".into(),
            passed: lcn.max < nystrom.max,
        },
        Check {
            name: "LCN max error below 2 e^{-(D-2r)/lambda}".into(),
            passed: lcn.max < lcn_bound,
        },
        Check {
            name: "observed Sinkhorn iterations within the bound".into(),
            passed: run.converged && (run.iters as f64) <= bound,
        },
    ];
    Ok(TheoremCheckReport {
        scenario: "clustered".into(),
        n,
        m: n,
        lambda,
        sparse,
        nystrom,
        lcn,
        lcn_residual: residual_off_pattern(&a),
        predicted_sparse_max: Some(predicted_sparse),
        predicted_nystrom_intra: Some(predicted_intra),
        measured_nystrom_intra: Some(intra),
        lcn_bound: Some(lcn_bound),
        rho,
        eps: s.eps,
        eps_prime: ep,
        kernel_tolerance: 0.5 * ep * (-rho / lambda).exp(),
        iterations_observed: run.iters,
        iteration_bound: bound,
        checks,
    })
}

fn manifold_study(s: &ManifoldStudy) -> Result<TheoremCheckReport> {
    let p = uniform_ball(s.n, s.dim, s.seed, 0)?;
    let q = uniform_ball(s.n, s.dim, s.seed, 1)?;
    let buckets = buckets_for_degree(s.n, s.n, s.neighbors, 1, false);
    let pairs = lsh_pairs(&p, &q, &LshConfig::kmeans(buckets, s.seed))?;
    let landmarks = select_landmarks(&p, &q, s.landmarks, LandmarkMethod::Kmeans, s.seed)?;
    let a = approximations(&p, &q, pairs, &landmarks, s.lambda)?;
    let sparse = error_stats(&a.exact, &a.sparse);
    let nystrom = error_stats(&a.exact, &a.nystrom);
    let lcn = error_stats(&a.exact, &a.lcn);
    let residual = residual_off_pattern(&a);

    let rho = max_pairwise_distance(&p, &q);
    let marg = Marginals::uniform(s.n, s.n);
    let dense = KernelOperator::dense(build_kernel(&build_cost(&p, &q, CostFunction::Euclidean)?, s.lambda)?);
    let run = sinkhorn(&dense, &marg, &SinkhornOptions::with_tol(s.eps))?;
    let bound = iteration_bound(&dense, &marg, s.eps)?;
    let ep = eps_prime(s.eps, rho, s.lambda, s.n);
    let checks = vec![
        Check {
            name: "LCN residual error below Nystrom max error".into(),
            passed: residual < nystrom.max,
        },
        Check {
            name: "observed Sinkhorn iterations within the bound".into(),
            passed: run.converged && (run.iters as f64) <= bound,
        },
    ];
    Ok(TheoremCheckReport {
        scenario: "uniform-manifold".into(),
        n: s.n,
        m: s.n,
        lambda: s.lambda,
        sparse,
        nystrom,
        lcn,
        lcn_residual: residual,
        predicted_sparse_max: None,
        predicted_nystrom_intra: None,
        measured_nystrom_intra: None,
        lcn_bound: None,
        rho,
        eps: s.eps,
        eps_prime: ep,
        kernel_tolerance: 0.5 * ep * (-rho / s.lambda).exp(),
        iterations_observed: run.iters,
        iteration_bound: bound,
        checks,
    })
}

/// One CSV row; metric fields are empty when no reference was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: String,
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub budget: usize,
    pub rel_err_d: Option<f64>,
    pub pcc: Option<f64>,
    pub iou: Option<f64>,
    pub iters: Option<usize>,
    pub ms_kernel: f64,
    pub ms_ot: f64,
}

pub const CSV_HEADER: &str = "variant,n,m,lambda,budget,rel_err_d,pcc,iou,iters,ms_kernel,ms_ot";

pub fn write_rows<W: Write>(rows: &[MetricsRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct SweepConfig {
    pub variants: Vec<Variant>,
    /// Point counts `n = m`, strictly increasing.
    pub sizes: Vec<usize>,
    /// Total budgets (neighbors + landmarks, split evenly for LCN).
    pub budgets: Vec<usize>,
    pub dim: usize,
    pub lambda: f64,
    /// Fixed number of Sinkhorn iterations per timed solve.
    pub iters: usize,
    /// Timed repetitions; the fastest is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Sparse],
            sizes: vec![1000, 2000, 4000],
            budgets: vec![40],
            dim: 16,
            lambda: 0.05,
            iters: 50,
            repeats: 3,
            seed: 0,
        }
    }
}

/// Wall time of kernel construction and of a fixed number of Sinkhorn
/// iterations for every `(variant, size, budget)` triple.
pub fn runtime_sweep(cfg: &SweepConfig) -> Result<Vec<MetricsRow>> {
    if cfg.sizes.is_empty() || cfg.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("sweep sizes must be non-empty and strictly increasing".into()));
    }
    if cfg.iters == 0 || cfg.repeats == 0 {
        return Err(Error::InvalidParameter("iters and repeats must be positive".into()));
    }
    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        let p = uniform_ball(n, cfg.dim, cfg.seed, 0)?;
        let q = uniform_ball(n, cfg.dim, cfg.seed, 1)?;
        let marg = Marginals::uniform(n, n);
        for &variant in &cfg.variants {
            let budgets: &[usize] = if variant == Variant::Full { &[0] } else { &cfg.budgets };
            for &budget in budgets {
                let spec = OperatorSpec {
                    budget: Budget::total(budget),
                    ..OperatorSpec::new(cfg.lambda, cfg.seed)
                };
                let start = Instant::now();
                let op = build_operator(variant, &p, &q, &spec)?;
                let ms_kernel = start.elapsed().as_secs_f64() * 1e3;
                let mut best = f64::INFINITY;
                for _ in 0..cfg.repeats {
                    let start = Instant::now();
                    sinkhorn(&op, &marg, &SinkhornOptions::fixed_iters(cfg.iters))?;
                    best = best.min(start.elapsed().as_secs_f64() * 1e3);
                }
                rows.push(MetricsRow {
                    variant: variant.name().into(),
                    n,
                    m: n,
                    lambda: cfg.lambda,
                    budget,
                    rel_err_d: None,
                    pcc: None,
                    iou: None,
                    iters: Some(cfg.iters),
                    ms_kernel,
                    ms_ot: best,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_plans() {
        let a = array![[0.1, 0.2], [0.3, 0.4]];
        let c = compare_dense(&a, &a, 2.0, 2.0).unwrap();
        assert_eq!(c.rel_err_d, 0.0);
        assert!((c.pcc - 1.0).abs() < 1e-15);
        assert_eq!(c.iou, 1.0);
    }

    #[test]
    fn disjoint_top_sets() {
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let b = array![[0.0, 0.0], [0.0, 1.0]];
        assert_eq!(top_iou(&a, &b), 0.0);
    }

    #[test]
    fn ties_break_by_position() {
        let a = Array2::from_elem((40, 40), 1.0);
        // k = ceil(1.6) = 2: the first two entries in row-major order
        assert_eq!(top_entries(&a, 2), vec![0, 1]);
        let mut b = a.clone();
        b[[39, 39]] = 2.0;
        assert_eq!(top_entries(&b, 2), vec![0, 1599]);
    }

    #[test]
    fn constant_plan_has_no_pcc() {
        let a = array![[0.25, 0.25], [0.25, 0.25]];
        let b = array![[0.1, 0.4], [0.4, 0.1]];
        assert!(matches!(compare_dense(&a, &b, 1.0, 1.0), Err(Error::ZeroVariance)));
    }

    #[test]
    fn swapping_arguments_keeps_pcc_and_iou() {
        let a = array![[0.1, 0.5, 0.2], [0.05, 0.1, 0.05]];
        let b = array![[0.2, 0.3, 0.1], [0.1, 0.2, 0.1]];
        let x = compare_dense(&a, &b, 1.0, 2.0).unwrap();
        let y = compare_dense(&b, &a, 2.0, 1.0).unwrap();
        assert!((x.pcc - y.pcc).abs() < 1e-15);
        assert_eq!(x.iou, y.iou);
        assert_eq!(x.rel_err_d, 1.0);
        assert_eq!(y.rel_err_d, 0.5);
    }

    #[test]
    fn pearson_against_hand_computation() {
        let a = array![[1.0, 2.0, 3.0]];
        let b = array![[2.0, 4.0, 7.0]];
        // cov = 2.5, var_a = 1, var_b = 6.333..; r = 2.5 / sqrt(6.333..)
        let want = 2.5 / (19.0f64 / 3.0).sqrt();
        assert!((pearson(&a, &b).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn kl_properties() {
        let a = array![[0.2, 0.3], [0.1, 0.4]];
        assert_eq!(kl_divergence(&a, &a), 0.0);
        let b = array![[0.25, 0.25], [0.25, 0.25]];
        assert!(kl_divergence(&a, &b) > 0.0);
        let c = array![[0.0, 0.5], [0.1, 0.4]];
        assert_eq!(kl_divergence(&a, &c), f64::INFINITY);
    }

    #[test]
    fn clustered_study_rejects_wide_clusters() {
        let mut s = ClusteredStudy::default();
        s.layout.radius = 2.0;
        assert!(matches!(kernel_error_study(&Scenario::Clustered(s)), Err(Error::Infeasible(_))));
    }

    #[test]
    fn csv_header_is_stable() {
        let mut out = Vec::new();
        let row = MetricsRow {
            variant: "sparse".into(),
            n: 2,
            m: 3,
            lambda: 0.05,
            budget: 40,
            rel_err_d: None,
            pcc: Some(0.5),
            iou: None,
            iters: Some(7),
            ms_kernel: 1.5,
            ms_ot: 2.0,
        };
        write_rows(&[row], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "sparse,2,3,0.05,40,,0.5,,7,1.5,2.0");
        let mut empty = Vec::new();
        write_rows(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim(), CSV_HEADER);
    }
}
