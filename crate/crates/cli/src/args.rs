//! Command-line surface. Flags mirror the JSON configuration fields and
//! override them when both are given.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lcn_ot::eval::{ClusteredStudy, ManifoldStudy, Scenario, SweepConfig};
use lcn_ot::experiment::{BpConfig, ProblemSource, RunConfig, Variant};
use serde::de::DeserializeOwned;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "lcn-ot", version, about = "Entropy-regularized optimal transport with sparse and low-rank kernels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded pair of point sets to disk.
    Generate(GenerateArgs),
    /// Solve transport problems for every seed and variant.
    Run(RunArgs),
    /// Time kernel construction and Sinkhorn iterations over problem sizes.
    Sweep(SweepArgs),
    /// Measure kernel approximation errors against closed-form predictions.
    TheoremCheck(TheoremArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    UniformBall,
    Clustered,
    File,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub box_size: Option<f64>,
    /// Source point file (text or binary).
    #[arg(long)]
    pub p_file: Option<PathBuf>,
    /// Sink point file (text or binary).
    #[arg(long)]
    pub q_file: Option<PathBuf>,
}

impl ProblemArgs {
    fn is_empty(&self) -> bool {
        self.problem.is_none()
            && self.dim.is_none()
            && self.n.is_none()
            && self.m.is_none()
            && self.clusters.is_none()
            && self.separation.is_none()
            && self.radius.is_none()
            && self.box_size.is_none()
            && self.p_file.is_none()
            && self.q_file.is_none()
    }

    pub fn source(&self) -> Result<ProblemSource, CliError> {
        let need = |v: Option<usize>, name: &str| v.ok_or_else(|| CliError::Config(format!("--{name} is required")));
        let kind = self.problem.ok_or_else(|| CliError::Config("--problem is required".into()))?;
        Ok(match kind {
            ProblemKind::UniformBall => {
                let n = need(self.n, "n")?;
                ProblemSource::UniformBall {
                    dim: need(self.dim, "dim")?,
                    n,
                    m: self.m.unwrap_or(n),
                }
            }
            ProblemKind::Clustered => {
                let n = need(self.n, "n")?;
                ProblemSource::Clustered {
                    dim: self.dim.unwrap_or(2),
                    clusters: need(self.clusters, "clusters")?,
                    separation: self
                        .separation
                        .ok_or_else(|| CliError::Config("--separation is required".into()))?,
                    radius: self.radius.ok_or_else(|| CliError::Config("--radius is required".into()))?,
                    n,
                    m: self.m.unwrap_or(n),
                    box_size: self.box_size,
                }
            }
            ProblemKind::File => ProblemSource::File {
                p: self.p_file.clone().ok_or_else(|| CliError::Config("--p-file is required".into()))?,
                q: self.q_file.clone().ok_or_else(|| CliError::Config("--q-file is required".into()))?,
            },
        })
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving `p` and `q` point files.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Write the binary format instead of text.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags given alongside override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Comma-separated subset of full, sparse, nystrom, lcn.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// euclidean, negative-dot or cosine.
    #[arg(long)]
    pub cost: Option<String>,
    /// Average LSH neighbors per point.
    #[arg(long)]
    pub neighbors: Option<f64>,
    #[arg(long)]
    pub landmarks: Option<usize>,
    /// Total neighbors plus landmarks, split evenly for LCN.
    #[arg(long)]
    pub total_budget: Option<usize>,
    /// cross-polytope, kmeans or hierarchical-kmeans.
    #[arg(long)]
    pub lsh_scheme: Option<String>,
    #[arg(long)]
    pub lsh_bands: Option<usize>,
    #[arg(long)]
    pub lsh_rows_per_band: Option<usize>,
    #[arg(long)]
    pub lsh_buckets: Option<usize>,
    /// kmeans or kmeans-plus-plus.
    #[arg(long)]
    pub landmark_method: Option<String>,
    /// Enables unbalanced transport with this deletion cost on both sides
    /// unless the per-side flags are given.
    #[arg(long)]
    pub deletion_cost: Option<f64>,
    #[arg(long)]
    pub deletion_cost_p: Option<f64>,
    #[arg(long)]
    pub deletion_cost_q: Option<f64>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// CSV destination; the JSON records are written next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Zero all timings so identical configurations give identical output.
    #[arg(long)]
    pub deterministic: bool,
}

/// Parses a kebab-case name through the type's serde representation.
pub fn parse_name<T: DeserializeOwned>(name: &str, what: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| CliError::Config(format!("unknown {what} '{name}'")))
}

pub fn parse_variants(names: &[String]) -> Result<Vec<Variant>, CliError> {
    names
        .iter()
        .map(|s| s.trim().parse::<Variant>().map_err(|e| CliError::Config(e.to_string())))
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &PathBuf) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let mut cfg: RunConfig = read_json(path)?;
                if !self.problem.is_empty() {
                    cfg.problem = self.problem.source()?;
                }
                cfg
            }
            None => {
                let variants = self
                    .variants
                    .as_ref()
                    .ok_or_else(|| CliError::Config("--variants is required without --config".into()))?;
                RunConfig::new(self.problem.source()?, parse_variants(variants)?)
            }
        };
        if let Some(v) = &self.variants {
            cfg.variants = parse_variants(v)?;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(c) = &self.cost {
            cfg.cost = parse_name(c, "cost function")?;
        }
        if self.neighbors.is_some() || self.landmarks.is_some() || self.total_budget.is_some() {
            cfg.budget.neighbors = self.neighbors.or(cfg.budget.neighbors);
            cfg.budget.landmarks = self.landmarks.or(cfg.budget.landmarks);
            cfg.budget.total = self.total_budget.or(cfg.budget.total);
        }
        if let Some(s) = &self.lsh_scheme {
            cfg.lsh.scheme = parse_name(s, "LSH scheme")?;
        }
        if let Some(b) = self.lsh_bands {
            cfg.lsh.bands = b;
        }
        if let Some(r) = self.lsh_rows_per_band {
            cfg.lsh.rows_per_band = r;
        }
        if let Some(b) = self.lsh_buckets {
            cfg.lsh.buckets_per_fn = b;
        }
        if let Some(m) = &self.landmark_method {
            cfg.landmark_method = parse_name(m, "landmark method")?;
        }
        let side_p = self.deletion_cost_p.or(self.deletion_cost);
        let side_q = self.deletion_cost_q.or(self.deletion_cost);
        if side_p.is_some() || side_q.is_some() {
            let old = cfg.bp.clone();
            let pick = |v: Option<f64>, prev: Option<f64>| {
                v.or(prev).ok_or_else(|| CliError::Config("both deletion costs are required".into()))
            };
            cfg.bp = Some(BpConfig {
                deletion_cost_p: pick(side_p, old.as_ref().map(|b| b.deletion_cost_p))?,
                deletion_cost_q: pick(side_q, old.as_ref().map(|b| b.deletion_cost_q))?,
            });
        }
        if let Some(h) = self.heads {
            cfg.heads = h;
        }
        if let Some(t) = self.tol {
            cfg.tol = Some(t);
        }
        if let Some(i) = self.max_iters {
            cfg.max_iters = i;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.output {
            cfg.output = Some(o.clone());
        }
        cfg.deterministic |= self.deterministic;
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON sweep configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Comma-separated, strictly increasing point counts.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination, standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl SweepArgs {
    pub fn to_config(&self) -> Result<SweepConfig, CliError> {
        let mut cfg: SweepConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => SweepConfig::default(),
        };
        if let Some(v) = &self.variants {
            cfg.variants = parse_variants(v)?;
        }
        if let Some(s) = &self.sizes {
            cfg.sizes = s.clone();
        }
        if let Some(b) = &self.budgets {
            cfg.budgets = b.clone();
        }
        if let Some(d) = self.dim {
            cfg.dim = d;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(i) = self.iters {
            cfg.iters = i;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioKind {
    Clustered,
    UniformManifold,
}

#[derive(Debug, Args)]
pub struct TheoremArgs {
    #[arg(long, value_enum, default_value = "clustered")]
    pub scenario: ScenarioKind,
    /// JSON scenario (with a `kind` field); replaces `--scenario`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON report destination, standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl TheoremArgs {
    pub fn to_scenario(&self) -> Result<Scenario, CliError> {
        let mut scenario = match &self.config {
            Some(p) => read_json(p)?,
            None => match self.scenario {
                ScenarioKind::Clustered => Scenario::Clustered(ClusteredStudy::default()),
                ScenarioKind::UniformManifold => Scenario::UniformManifold(ManifoldStudy::default()),
            },
        };
        match &mut scenario {
            Scenario::Clustered(s) => {
                s.lambda = self.lambda.unwrap_or(s.lambda);
                s.seed = self.seed.unwrap_or(s.seed);
            }
            Scenario::UniformManifold(s) => {
                s.lambda = self.lambda.unwrap_or(s.lambda);
                s.seed = self.seed.unwrap_or(s.seed);
            }
        }
        Ok(scenario)
    }
}
