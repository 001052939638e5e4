//! Run configuration, operator construction per variant and the
//! seed-by-variant experiment driver.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{around_centers, uniform_ball, ClusterLayout};
use crate::error::{Error, Result};
use crate::eval::{compare_plans, MetricsRow, PlanComparison};
use crate::geometry::{build_cost, build_kernel, check_lambda, CostFunction, Marginals, PointSet};
use crate::lsh::{buckets_for_degree, lsh_pairs, LshConfig, LshScheme};
use crate::nystrom::{build_factors, select_landmarks, LandmarkMethod};
use crate::sinkhorn::{multihead, sinkhorn, BpExtension, KernelOperator, SinkhornOptions};
use crate::sparse::{build_correction, build_sparse};

/// Reference solves are skipped above this many plan entries.
pub const REFERENCE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    Sparse,
    Nystrom,
    Lcn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Sparse, Variant::Nystrom, Variant::Lcn];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Sparse => "sparse",
            Variant::Nystrom => "nystrom",
            Variant::Lcn => "lcn",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variant '{s}' (full, sparse, nystrom, lcn)")))
    }
}

/// Approximation budget. Explicit `neighbors` / `landmarks` win; otherwise
/// `total` goes entirely to sparse or Nyström and is split evenly for LCN.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct Budget {
    /// Expected LSH neighbors per point.
    pub neighbors: Option<f64>,
    pub landmarks: Option<usize>,
    pub total: Option<usize>,
}

impl Budget {
    pub fn total(total: usize) -> Self {
        Self {
            total: Some(total),
            ..Self::default()
        }
    }

    /// `(neighbors, landmarks)` the variant uses.
    pub fn resolve(&self, variant: Variant) -> Result<(Option<f64>, Option<usize>)> {
        let missing = |what: &str| {
            Error::InvalidParameter(format!("variant {} needs a {what} budget", variant.name()))
        };
        let half = self.total.map(|t| t / 2);
        let resolved = match variant {
            Variant::Full => (None, None),
            Variant::Sparse => (
                Some(self.neighbors.or(self.total.map(|t| t as f64)).ok_or_else(|| missing("neighbors"))?),
                None,
            ),
            Variant::Nystrom => (None, Some(self.landmarks.or(self.total).ok_or_else(|| missing("landmarks"))?)),
            Variant::Lcn => (
                Some(self.neighbors.or(half.map(|h| h as f64)).ok_or_else(|| missing("neighbors"))?),
                Some(
                    self.landmarks
                        .or(self.total.zip(half).map(|(t, h)| t - h))
                        .ok_or_else(|| missing("landmarks"))?,
                ),
            ),
        };
        if let Some(nb) = resolved.0 {
            if !(nb > 0.0 && nb.is_finite()) {
                return Err(Error::InvalidParameter(format!("neighbors must be positive, got {nb}")));
            }
        }
        if resolved.1 == Some(0) {
            return Err(Error::InvalidParameter("landmarks must be positive".into()));
        }
        Ok(resolved)
    }

    /// Total budget reported in output rows.
    pub fn reported(&self, variant: Variant) -> usize {
        match self.resolve(variant) {
            Ok((nb, lm)) => nb.map_or(0, |v| v.round() as usize) + lm.unwrap_or(0),
            Err(_) => 0,
        }
    }
}

/// Everything needed to build an operator besides the points.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub cost: CostFunction,
    pub lambda: f64,
    pub budget: Budget,
    pub lsh: LshConfig,
    pub landmark_method: LandmarkMethod,
    pub seed: u64,
}

impl OperatorSpec {
    pub fn new(lambda: f64, seed: u64) -> Self {
        Self {
            cost: CostFunction::Euclidean,
            lambda,
            budget: Budget::default(),
            lsh: LshConfig::default(),
            landmark_method: LandmarkMethod::Kmeans,
            seed,
        }
    }

    /// LSH configuration whose bucket count targets `neighbors` per row.
    pub fn lsh_for(&self, n: usize, m: usize, neighbors: f64) -> LshConfig {
        let mut cfg = self.lsh.clone();
        let even = cfg.scheme == LshScheme::CrossPolytope;
        cfg.buckets_per_fn = buckets_for_degree(n, m, neighbors, cfg.rows_per_band, even);
        cfg.seed = cfg.seed.wrapping_add(self.seed);
        cfg
    }
}

pub fn build_operator(variant: Variant, p: &PointSet, q: &PointSet, spec: &OperatorSpec) -> Result<KernelOperator> {
    check_lambda(spec.lambda)?;
    let (neighbors, landmarks) = spec.budget.resolve(variant)?;
    let pattern = |nb: f64| lsh_pairs(p, q, &spec.lsh_for(p.len(), q.len(), nb));
    let factors = |l: usize| {
        let set = select_landmarks(p, q, l, spec.landmark_method, spec.seed)?;
        build_factors(p, q, &set, spec.cost, spec.lambda)
    };
    match variant {
        Variant::Full => Ok(KernelOperator::dense(build_kernel(&build_cost(p, q, spec.cost)?, spec.lambda)?)),
        Variant::Sparse => {
            let pairs = pattern(neighbors.expect("resolved"))?;
            Ok(KernelOperator::sparse(build_sparse(p, q, &pairs, spec.cost, spec.lambda)?))
        }
        Variant::Nystrom => KernelOperator::nystrom(factors(landmarks.expect("resolved"))?, spec.lambda),
        Variant::Lcn => {
            let pairs = pattern(neighbors.expect("resolved"))?;
            let sp = build_sparse(p, q, &pairs, spec.cost, spec.lambda)?;
            let f = factors(landmarks.expect("resolved"))?;
            let correction = build_correction(&sp, &f)?;
            KernelOperator::lcn(f, correction, spec.lambda)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSource {
    UniformBall {
        dim: usize,
        n: usize,
        m: usize,
    },
    Clustered {
        dim: usize,
        clusters: usize,
        separation: f64,
        radius: f64,
        n: usize,
        m: usize,
        #[serde(default, rename = "box-size")]
        box_size: Option<f64>,
    },
    File {
        p: PathBuf,
        q: PathBuf,
    },
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub p: PointSet,
    pub q: PointSet,
    pub marginals: Marginals,
}

/// Builds the point sets for one seed. Marginals are uniform.
pub fn generate(source: &ProblemSource, seed: u64) -> Result<Problem> {
    let (p, q) = match source {
        ProblemSource::UniformBall { dim, n, m } => (uniform_ball(*n, *dim, seed, 0)?, uniform_ball(*m, *dim, seed, 1)?),
        ProblemSource::Clustered {
            dim,
            clusters,
            separation,
            radius,
            n,
            m,
            box_size,
        } => {
            let layout = ClusterLayout {
                dim: *dim,
                clusters: *clusters,
                separation: *separation,
                radius: *radius,
                box_size: *box_size,
            };
            let centers = layout.place_centers(seed)?;
            (
                around_centers(&centers, *n, *radius, seed, 1)?,
                around_centers(&centers, *m, *radius, seed, 2)?,
            )
        }
        ProblemSource::File { p, q } => (PointSet::load(p)?, PointSet::load(q)?),
    };
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(p.dim(), q.dim()));
    }
    let marginals = Marginals::uniform(p.len(), q.len());
    Ok(Problem { p, q, marginals })
}

/// Uniform per-point deletion costs for unbalanced transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BpConfig {
    pub deletion_cost_p: f64,
    pub deletion_cost_q: f64,
}

fn default_lambda() -> f64 {
    0.05
}
fn default_heads() -> usize {
    1
}
fn default_max_iters() -> usize {
    crate::sinkhorn::DEFAULT_MAX_ITERS
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub variants: Vec<Variant>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub cost: CostFunction,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub lsh: LshConfig,
    #[serde(default)]
    pub landmark_method: LandmarkMethod,
    #[serde(default)]
    pub bp: Option<BpConfig>,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// CSV destination; JSON records go next to it.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Zero all timings so identical configs give identical output.
    #[serde(default)]
    pub deterministic: bool,
}

impl RunConfig {
    pub fn new(problem: ProblemSource, variants: Vec<Variant>) -> Self {
        Self {
            problem,
            variants,
            lambda: default_lambda(),
            cost: CostFunction::default(),
            budget: Budget::default(),
            lsh: LshConfig::default(),
            landmark_method: LandmarkMethod::default(),
            bp: None,
            heads: 1,
            tol: None,
            max_iters: default_max_iters(),
            seeds: default_seeds(),
            output: None,
            deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if self.variants.is_empty() {
            return Err(Error::InvalidParameter("at least one variant is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        if self.heads == 0 {
            return Err(Error::InvalidParameter("heads must be at least 1".into()));
        }
        if let Some(t) = self.tol {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(format!("tolerance must be non-negative, got {t}")));
            }
        }
        if self.landmark_method == LandmarkMethod::Explicit {
            return Err(Error::InvalidParameter("explicit landmarks cannot be set from a run config".into()));
        }
        if let Some(bp) = &self.bp {
            if bp.deletion_cost_p.is_nan() || bp.deletion_cost_q.is_nan() {
                return Err(Error::InvalidParameter("deletion costs must not be NaN".into()));
            }
        }
        self.lsh.validate()?;
        for v in &self.variants {
            self.budget.resolve(*v)?;
        }
        Ok(())
    }

    pub fn operator_spec(&self, seed: u64) -> OperatorSpec {
        OperatorSpec {
            cost: self.cost,
            lambda: self.lambda,
            budget: self.budget.clone(),
            lsh: self.lsh.clone(),
            landmark_method: self.landmark_method,
            seed,
        }
    }

    fn options(&self) -> SinkhornOptions {
        SinkhornOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            check_support: true,
        }
    }

    fn attach_bp(&self, op: KernelOperator, n: usize, m: usize) -> Result<KernelOperator> {
        match &self.bp {
            None => Ok(op),
            Some(bp) => {
                let lambda = op.lambda;
                op.with_bp(BpExtension::from_costs(
                    &vec![bp.deletion_cost_p; n],
                    &vec![bp.deletion_cost_q; m],
                    lambda,
                )?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub variant: Variant,
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
    pub budget: usize,
    pub distance: Option<f64>,
    /// One distance per head when more than one head is requested.
    pub head_distances: Option<Vec<Option<f64>>>,
    pub iters: Option<usize>,
    pub converged: Option<bool>,
    pub marginal_err: Option<f64>,
    pub comparison: Option<PlanComparison>,
    pub ms_kernel: f64,
    pub ms_ot: f64,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn to_row(&self) -> MetricsRow {
        MetricsRow {
            variant: self.variant.name().into(),
            n: self.n,
            m: self.m,
            lambda: self.lambda,
            budget: self.budget,
            rel_err_d: self.comparison.map(|c| c.rel_err_d),
            pcc: self.comparison.map(|c| c.pcc),
            iou: self.comparison.map(|c| c.iou),
            iters: self.iters,
            ms_kernel: self.ms_kernel,
            ms_ot: self.ms_ot,
        }
    }
}

/// JSON document written by `run`: the configuration and every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub config: RunConfig,
    pub records: Vec<RunRecord>,
}

struct Reference {
    plan: Array2<f64>,
    distance: f64,
}

fn reference_solve(cfg: &RunConfig, prob: &Problem) -> Result<Reference> {
    let op = build_operator(Variant::Full, &prob.p, &prob.q, &cfg.operator_spec(0))?;
    let op = cfg.attach_bp(op, prob.p.len(), prob.q.len())?;
    let r = sinkhorn(&op, &prob.marginals, &cfg.options())?;
    Ok(Reference {
        plan: r.plan.densify(),
        distance: r.distance,
    })
}

fn elapsed_ms(start: Instant, deterministic: bool) -> f64 {
    if deterministic {
        0.0
    } else {
        start.elapsed().as_secs_f64() * 1e3
    }
}

fn run_one(
    cfg: &RunConfig,
    seed: u64,
    variant: Variant,
    problem: &std::result::Result<Problem, String>,
    reference: &Option<std::result::Result<Reference, String>>,
) -> RunRecord {
    let (n, m) = problem.as_ref().map_or((0, 0), |p| (p.p.len(), p.q.len()));
    let mut rec = RunRecord {
        seed,
        variant,
        n,
        m,
        lambda: cfg.lambda,
        budget: cfg.budget.reported(variant),
        distance: None,
        head_distances: None,
        iters: None,
        converged: None,
        marginal_err: None,
        comparison: None,
        ms_kernel: 0.0,
        ms_ot: 0.0,
        warnings: Vec::new(),
        error: None,
    };
    let prob = match problem {
        Ok(p) => p,
        Err(e) => {
            rec.error = Some(format!("{} seed {seed}: {e}", variant.name()));
            return rec;
        }
    };
    let spec = cfg.operator_spec(seed);
    let start = Instant::now();
    let op = build_operator(variant, &prob.p, &prob.q, &spec).and_then(|op| cfg.attach_bp(op, n, m));
    rec.ms_kernel = elapsed_ms(start, cfg.deterministic);
    let op = match op {
        Ok(op) => op,
        Err(e) => {
            rec.error = Some(format!("{} seed {seed}: {e}", variant.name()));
            return rec;
        }
    };
    let start = Instant::now();
    let result = sinkhorn(&op, &prob.marginals, &cfg.options());
    rec.ms_ot = elapsed_ms(start, cfg.deterministic);
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            rec.error = Some(format!("{} seed {seed}: {e}", variant.name()));
            return rec;
        }
    };
    rec.distance = Some(result.distance);
    rec.iters = Some(result.iters);
    rec.converged = Some(result.converged);
    rec.marginal_err = Some(result.marginal_err);
    rec.warnings = result.warnings.clone();
    if !result.converged {
        rec.warnings.push(format!("did not converge in {} iterations", result.iters));
    }
    match reference {
        Some(Ok(r)) => match compare_plans(&r.plan, &result.plan, r.distance, result.distance) {
            Ok(c) => rec.comparison = Some(c),
            Err(e) => rec.warnings.push(format!("comparison unavailable: {e}")),
        },
        Some(Err(e)) => rec.warnings.push(format!("reference solve failed: {e}")),
        None => {}
    }
    if cfg.heads > 1 {
        let build = |lambda: f64| {
            let spec = OperatorSpec { lambda, ..spec.clone() };
            build_operator(variant, &prob.p, &prob.q, &spec).and_then(|op| cfg.attach_bp(op, n, m))
        };
        match multihead(build, &prob.marginals, cfg.heads, cfg.lambda, &cfg.options()) {
            Ok(heads) => {
                for (k, h) in heads.iter().enumerate() {
                    if let Err(e) = h {
                        rec.warnings.push(format!("head {}: {e}", k + 1));
                    }
                }
                rec.head_distances = Some(heads.into_iter().map(|h| h.ok()).collect());
            }
            Err(e) => rec.warnings.push(format!("multi-head failed: {e}")),
        }
    }
    rec
}

/// Runs every `(seed, variant)` pair. Configuration problems are returned
/// as errors; failures of single runs are recorded in their record.
pub fn run(cfg: &RunConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    type Prepared = (
        u64,
        std::result::Result<Problem, String>,
        Option<std::result::Result<Reference, String>>,
    );
    let prepared: Vec<Prepared> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let prob = generate(&cfg.problem, seed).map_err(|e| e.to_string());
            let reference = match &prob {
                Ok(p) if p.p.len() * p.q.len() <= REFERENCE_LIMIT => {
                    Some(reference_solve(cfg, p).map_err(|e| e.to_string()))
                }
                _ => None,
            };
            (seed, prob, reference)
        })
        .collect();
    let tasks: Vec<(usize, Variant)> = (0..prepared.len())
        .flat_map(|s| cfg.variants.iter().map(move |v| (s, *v)))
        .collect();
    Ok(tasks
        .par_iter()
        .map(|&(s, v)| {
            let (seed, prob, reference) = &prepared[s];
            run_one(cfg, *seed, v, prob, reference)
        })
        .collect())
}
