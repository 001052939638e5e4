//! Log-domain Sinkhorn iterations over any [`KernelOperator`].
//!
//! Each iteration updates `log s = log p - log(K t)` and then
//! `log t = log q - log(K^T s)`. After the column update the column
//! marginals hold exactly, so the convergence test only measures the row
//! side.

mod grad;
mod operator;
mod plan;

pub use grad::{grad_cost, CostGradient, Gradient};
pub use operator::{BpExtension, KernelOperator, KernelVariant};
pub use plan::{Plan, PlanCorrection};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_lambda, Marginals};
use crate::logsumexp::logsumexp;
use crate::support::{has_support, SupportStatus};

pub const DEFAULT_MAX_ITERS: usize = 500;
/// Default tolerance relative to the total mass `sum p + sum q`.
pub const DEFAULT_REL_TOL: f64 = 1e-6;
/// Plan entries below this are skipped in the entropy term.
const ENTROPY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornOptions {
    /// Absolute marginal-error tolerance; `None` uses
    /// `DEFAULT_REL_TOL * (sum p + sum q)`. Zero runs exactly `max_iters`.
    pub tol: Option<f64>,
    pub max_iters: usize,
    /// Check sparse patterns for a perfect matching and warn without one.
    pub check_support: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iters: DEFAULT_MAX_ITERS,
            check_support: true,
        }
    }
}

impl SinkhornOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol: Some(tol),
            ..Self::default()
        }
    }

    /// Runs exactly `iters` iterations, for timing.
    pub fn fixed_iters(iters: usize) -> Self {
        Self {
            tol: Some(0.0),
            max_iters: iters,
            check_support: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub variant: &'static str,
    pub distance: f64,
    pub plan: Plan,
    pub iters: usize,
    pub converged: bool,
    pub marginal_err: f64,
    /// Marginal error after every iteration.
    pub trace: Vec<f64>,
    /// Converged log scalings (extended vectors with BP).
    pub log_s: Array1<f64>,
    pub log_t: Array1<f64>,
    pub lambda: f64,
    pub warnings: Vec<String>,
}

/// Marginals the solver actually matches: `p, q` or, with BP, rows
/// `[p; q]` and columns `[q; p]`.
pub fn solver_marginals(op: &KernelOperator, marg: &Marginals) -> Result<(Array1<f64>, Array1<f64>)> {
    let (n, m) = op.inner_shape();
    if marg.p.len() != n || marg.q.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (n, m),
            got: (marg.p.len(), marg.q.len()),
        });
    }
    if op.bp.is_none() {
        return Ok((marg.p.clone(), marg.q.clone()));
    }
    let rows = marg.p.iter().chain(marg.q.iter()).copied().collect();
    let cols = marg.q.iter().chain(marg.p.iter()).copied().collect();
    Ok((rows, cols))
}

pub fn sinkhorn(op: &KernelOperator, marg: &Marginals, opts: &SinkhornOptions) -> Result<SinkhornResult> {
    check_lambda(op.lambda)?;
    let variant = op.name();
    let (p, q) = solver_marginals(op, marg)?;
    let tol = opts.tol.unwrap_or(DEFAULT_REL_TOL * (p.sum() + q.sum()));
    if !(tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be non-negative, got {tol}")));
    }
    let mut warnings = Vec::new();
    if op.bp.is_none() && !marg.is_balanced() {
        warnings.push("marginals carry different total mass; balanced transport cannot converge".into());
    }
    if opts.check_support && op.bp.is_none() {
        if let KernelVariant::Sparse(k) = &op.variant {
            if has_support(&k.pattern) == SupportStatus::None {
                warnings.push("no-support: the sparsity pattern has no perfect matching".into());
            }
        }
    }
    let (empty_rows, empty_cols) = op.structural_zeros()?;
    let log_p: Vec<f64> = p.iter().map(|v| v.ln()).collect();
    let log_q: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let stranded: f64 = empty_cols.iter().zip(&q).filter(|(e, _)| **e).map(|(_, v)| v).sum();

    let (rows, cols) = op.shape();
    let mut log_s = vec![0.0; rows];
    let mut log_t = vec![0.0; cols];
    let mut kt = op.log_matvec(&log_t)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut err = f64::INFINITY;
    let mut iters = 0;
    while iters < opts.max_iters {
        iters += 1;
        scale(&mut log_s, &log_p, &kt, &empty_rows, variant, "row", iters)?;
        let ks = op.log_matvec_t(&log_s)?;
        scale(&mut log_t, &log_q, &ks, &empty_cols, variant, "column", iters)?;
        kt = op.log_matvec(&log_t)?;
        err = stranded
            + (0..rows)
                .map(|i| {
                    if empty_rows[i] {
                        p[i]
                    } else {
                        ((log_s[i] + kt[i]).exp() - p[i]).abs()
                    }
                })
                .sum::<f64>();
        if !err.is_finite() {
            return Err(Error::Stabilization {
                variant,
                detail: format!("marginal error is not finite at iteration {iters}"),
            });
        }
        trace.push(err);
        if err <= tol {
            converged = true;
            break;
        }
    }
    if opts.max_iters == 0 {
        err = stranded + p.iter().zip(&kt).map(|(pi, k)| (k.exp() - pi).abs()).sum::<f64>();
    }

    let plan = build_plan(op, &log_s, &log_t)?;
    let distance = match (&op.bp, &plan) {
        (None, Plan::Dense(_)) | (None, Plan::Sparse { .. }) => {
            entropic_objective(op, &plan, &log_s, &log_t)
        }
        (None, _) => distance_lcn(&plan, &log_s, &log_t, op.lambda),
        (Some(_), _) => {
            // extended marginals straight from the operator
            let ks = op.log_matvec_t(&log_s)?;
            let rows: Vec<f64> = log_s.iter().zip(&kt).map(|(a, b)| (a + b).exp()).collect();
            let cols: Vec<f64> = log_t.iter().zip(&ks).map(|(a, b)| (a + b).exp()).collect();
            distance_from_scalings(&log_s, &log_t, &rows, &cols, op.lambda)
        }
    };
    Ok(SinkhornResult {
        variant,
        distance,
        plan,
        iters,
        converged,
        marginal_err: err,
        trace,
        log_s: Array1::from(log_s),
        log_t: Array1::from(log_t),
        lambda: op.lambda,
        warnings,
    })
}

fn scale(
    out: &mut [f64],
    log_target: &[f64],
    log_k: &[f64],
    empty: &[bool],
    variant: &'static str,
    side: &str,
    iter: usize,
) -> Result<()> {
    for (i, o) in out.iter_mut().enumerate() {
        if empty[i] {
            *o = 0.0;
            continue;
        }
        let v = log_target[i] - log_k[i];
        if !v.is_finite() {
            return Err(Error::Stabilization {
                variant,
                detail: format!("{side} scaling {i} became {v} at iteration {iter}"),
            });
        }
        *o = v;
    }
    Ok(())
}

/// Shift `a` that balances `exp(log_s - a)` against `exp(log_t + a)` when a
/// plan is stored as separate factors.
pub(crate) fn balance_shift(log_s: &[f64], log_t: &[f64]) -> f64 {
    let ms = log_s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mt = log_t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if ms.is_finite() && mt.is_finite() {
        0.5 * (ms - mt)
    } else {
        0.0
    }
}

fn build_inner_plan(op: &KernelOperator, log_s: &[f64], log_t: &[f64]) -> Plan {
    match &op.variant {
        KernelVariant::Dense(k) => {
            let (n, m) = k.shape();
            let rows: Vec<f64> = (0..n)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let row = k.log_k.row(i);
                    (0..m).map(move |j| (log_s[i] + row[j] + log_t[j]).exp())
                })
                .collect();
            Plan::Dense(Array2::from_shape_vec((n, m), rows).expect("shape matches"))
        }
        KernelVariant::Sparse(k) => Plan::Sparse {
            pattern: k.pattern.clone(),
            values: k
                .pattern
                .iter()
                .zip(&k.log_vals)
                .map(|((i, j), v)| (log_s[i] + v + log_t[j]).exp())
                .collect(),
        },
        KernelVariant::Nystrom(f) => {
            let (pu, pw) = low_rank_factors(f, log_s, log_t);
            Plan::LowRank {
                pu,
                pw,
                correction: None,
            }
        }
        KernelVariant::Lcn { factors, correction } => {
            let (pu, pw) = low_rank_factors(factors, log_s, log_t);
            let pairs = correction.pattern.iter();
            let mut sparse = Vec::with_capacity(correction.pattern.len());
            let mut nystrom = Vec::with_capacity(correction.pattern.len());
            for (k, (i, j)) in pairs.enumerate() {
                let st = log_s[i] + log_t[j];
                sparse.push((st + correction.log_sparse[k]).exp());
                nystrom.push(st.exp() * correction.nystrom[k]);
            }
            Plan::LowRank {
                pu,
                pw,
                correction: Some(PlanCorrection {
                    pattern: correction.pattern.clone(),
                    sparse,
                    nystrom,
                }),
            }
        }
    }
}

fn low_rank_factors(
    f: &crate::nystrom::NystromFactors,
    log_s: &[f64],
    log_t: &[f64],
) -> (Array2<f64>, Array2<f64>) {
    let a = balance_shift(log_s, log_t);
    let mut pu = f.u.clone();
    for (mut row, ls) in pu.rows_mut().into_iter().zip(log_s) {
        row *= (ls - a).exp();
    }
    let mut pw = f.w.clone();
    for (mut col, lt) in pw.columns_mut().into_iter().zip(log_t) {
        col *= (lt + a).exp();
    }
    (pu, pw)
}

/// Plan induced by the scalings `P = diag(e^{log_s}) K diag(e^{log_t})`.
pub fn build_plan(op: &KernelOperator, log_s: &[f64], log_t: &[f64]) -> Result<Plan> {
    let (rows, cols) = op.shape();
    if log_s.len() != rows || log_t.len() != cols {
        return Err(Error::ShapeMismatch {
            expected: (rows, cols),
            got: (log_s.len(), log_t.len()),
        });
    }
    let Some(bp) = &op.bp else {
        return Ok(build_inner_plan(op, log_s, log_t));
    };
    let (n, m) = op.inner_shape();
    let (s_hat, s_check) = log_s.split_at(n);
    let (t_hat, t_check) = log_t.split_at(m);
    let inner = build_inner_plan(op, s_hat, t_hat);
    let del_p = (0..n).map(|i| (s_hat[i] + bp.log_del_p[i] + t_check[i]).exp()).collect();
    let del_q = (0..m).map(|j| (s_check[j] + bp.log_del_q[j] + t_hat[j]).exp()).collect();
    let eps_eps = (logsumexp(s_check.iter().copied()) + logsumexp(t_check.iter().copied())).exp();
    Ok(Plan::Bp {
        inner: Box::new(inner),
        del_p,
        del_q,
        eps_eps,
    })
}

/// `<P, C> - lambda H(P)` for a kernel stored as `log K = -C / lambda`,
/// computed as `lambda * sum P (log P - log K)`.
fn entropic_objective(op: &KernelOperator, plan: &Plan, log_s: &[f64], log_t: &[f64]) -> f64 {
    let term = |pij: f64, st: f64| if pij < ENTROPY_FLOOR { 0.0 } else { pij * st };
    // log P - log K = log s_i + log t_j, so no cost matrix is needed
    let sum: f64 = match (plan, &op.variant) {
        (Plan::Dense(pm), _) => (0..pm.nrows())
            .into_par_iter()
            .map(|i| pm.row(i).iter().zip(log_t).map(|(v, lt)| term(*v, log_s[i] + lt)).sum::<f64>())
            .collect::<Vec<f64>>()
            .iter()
            // sequential outer sum keeps the result independent of the pool size
            .sum(),
        (Plan::Sparse { pattern, values }, _) => pattern
            .iter()
            .zip(values)
            .map(|((i, j), v)| term(*v, log_s[i] + log_t[j]))
            .sum(),
        _ => unreachable!("only called for dense and sparse plans"),
    };
    op.lambda * sum
}

/// `<P, C> - lambda H(P)` with the convention `0 log 0 = 0`. Works on any
/// plan that can be densified; entries with zero mass ignore their cost.
pub fn distance_dense(plan: &Plan, cost: &Array2<f64>, lambda: f64) -> Result<f64> {
    let dense = plan.densify();
    if dense.dim() != cost.dim() {
        return Err(Error::ShapeMismatch {
            expected: cost.dim(),
            got: dense.dim(),
        });
    }
    let mut total = 0.0;
    for (pij, cij) in dense.iter().zip(cost.iter()) {
        if *pij < ENTROPY_FLOOR {
            continue;
        }
        total += pij * cij + lambda * pij * pij.ln();
    }
    Ok(total)
}

/// `lambda (<log s, P 1> + <log t, P^T 1>)`, which equals the Sinkhorn
/// distance whenever `P = diag(s) K diag(t)` with `K = e^{-C/lambda}`.
pub fn distance_from_scalings(log_s: &[f64], log_t: &[f64], rows: &[f64], cols: &[f64], lambda: f64) -> f64 {
    let dot = |l: &[f64], w: &[f64]| -> f64 {
        l.iter().zip(w).filter(|(_, w)| **w > 0.0).map(|(a, b)| a * b).sum()
    };
    lambda * (dot(log_s, rows) + dot(log_t, cols))
}

/// Distance of a factored plan, using its marginals without densifying.
pub fn distance_lcn(plan: &Plan, log_s: &[f64], log_t: &[f64], lambda: f64) -> f64 {
    let rows = plan.row_sums();
    let cols = plan.col_sums();
    distance_from_scalings(
        log_s,
        log_t,
        rows.as_slice().expect("contiguous"),
        cols.as_slice().expect("contiguous"),
        lambda,
    )
}

/// Closed-form iteration bound `2 - 4 ln(min K * min marginal) / eps`.
pub fn iteration_bound_value(min_kernel: f64, min_marginal: f64, eps: f64) -> f64 {
    2.0 - 4.0 * (min_kernel * min_marginal).ln() / eps
}

/// Iteration bound for the operator's smallest positive entry.
pub fn iteration_bound(op: &KernelOperator, marg: &Marginals, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {eps}")));
    }
    let min_k = op
        .min_positive_entry()
        .ok_or_else(|| Error::InvalidParameter("kernel has no positive entry".into()))?;
    let (p, q) = solver_marginals(op, marg)?;
    let min_m = p.iter().chain(q.iter()).copied().fold(f64::INFINITY, f64::min);
    Ok(iteration_bound_value(min_k, min_m, eps))
}

/// `lambda_k = 2^{k - K/2} lambda` for `k = 1..=K`.
pub fn multihead_lambdas(heads: usize, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    if heads == 0 {
        return Err(Error::InvalidParameter("at least one head is required".into()));
    }
    Ok((1..=heads)
        .map(|k| 2f64.powf(k as f64 - heads as f64 / 2.0) * lambda)
        .collect())
}

/// Independent solves, one per head. `build` constructs the operator for a
/// given regularization; failures are reported per head.
pub fn multihead<F>(
    build: F,
    marg: &Marginals,
    heads: usize,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<Vec<Result<f64>>>
where
    F: Fn(f64) -> Result<KernelOperator> + Sync,
{
    let lambdas = multihead_lambdas(heads, lambda)?;
    Ok(lambdas
        .par_iter()
        .map(|&l| build(l).and_then(|op| sinkhorn(&op, marg, opts)).map(|r| r.distance))
        .collect())
}
