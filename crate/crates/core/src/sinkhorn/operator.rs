//! Kernel operators in the log domain.
//!
//! Every variant exposes `log(K e^x)` and `log(K^T e^y)`. Dense and sparse
//! kernels reduce with log-sum-exp; low-rank variants multiply in linear
//! space after shifting the input by its maximum and check that the result
//! stays positive.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{check_lambda, DenseKernel};
use crate::logsumexp::{logaddexp, logsumexp, max_finite};
use crate::nystrom::{check_positive, NystromFactors};
use crate::sparse::{LcnCorrection, SparseKernel};

#[derive(Debug, Clone, PartialEq)]
pub enum KernelVariant {
    Dense(DenseKernel),
    Sparse(SparseKernel),
    Nystrom(NystromFactors),
    Lcn {
        factors: NystromFactors,
        correction: LcnCorrection,
    },
}

impl KernelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            KernelVariant::Dense(_) => "dense",
            KernelVariant::Sparse(_) => "sparse",
            KernelVariant::Nystrom(_) => "nystrom",
            KernelVariant::Lcn { .. } => "lcn",
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            KernelVariant::Dense(k) => k.shape(),
            KernelVariant::Sparse(k) => k.shape(),
            KernelVariant::Nystrom(f) => f.shape(),
            KernelVariant::Lcn { factors, .. } => factors.shape(),
        }
    }
}

/// Deletion affinities of the bipartite-matching extension, stored as
/// logarithms so that a zero kernel (`-inf`) is representable.
#[derive(Debug, Clone, PartialEq)]
pub struct BpExtension {
    /// `log c'_{i,eps}` for every source point.
    pub log_del_p: Array1<f64>,
    /// `log c'_{eps,j}` for every sink point.
    pub log_del_q: Array1<f64>,
}

impl BpExtension {
    /// From linear-space deletion kernels (entries in `[0, inf)`).
    pub fn from_kernels(del_p: &[f64], del_q: &[f64]) -> Result<Self> {
        if del_p.iter().chain(del_q).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("deletion kernels must be finite and non-negative".into()));
        }
        Ok(Self {
            log_del_p: del_p.iter().map(|v| v.ln()).collect(),
            log_del_q: del_q.iter().map(|v| v.ln()).collect(),
        })
    }

    /// From deletion costs: `c' = exp(-c / lambda)`. Infinite cost forbids
    /// deletion.
    pub fn from_costs(cost_p: &[f64], cost_q: &[f64], lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if cost_p.iter().chain(cost_q).any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
            return Err(Error::NonFinite("deletion costs"));
        }
        Ok(Self {
            log_del_p: cost_p.iter().map(|c| -c / lambda).collect(),
            log_del_q: cost_q.iter().map(|c| -c / lambda).collect(),
        })
    }

    /// Zero deletion kernels.
    pub fn forbidden(n: usize, m: usize) -> Self {
        Self {
            log_del_p: Array1::from_elem(n, f64::NEG_INFINITY),
            log_del_q: Array1::from_elem(m, f64::NEG_INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOperator {
    pub variant: KernelVariant,
    pub bp: Option<BpExtension>,
    pub lambda: f64,
}

impl KernelOperator {
    pub fn dense(kernel: DenseKernel) -> Self {
        let lambda = kernel.lambda;
        Self {
            variant: KernelVariant::Dense(kernel),
            bp: None,
            lambda,
        }
    }

    pub fn sparse(kernel: SparseKernel) -> Self {
        let lambda = kernel.lambda;
        Self {
            variant: KernelVariant::Sparse(kernel),
            bp: None,
            lambda,
        }
    }

    pub fn nystrom(factors: NystromFactors, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            variant: KernelVariant::Nystrom(factors),
            bp: None,
            lambda,
        })
    }

    pub fn lcn(factors: NystromFactors, correction: LcnCorrection, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if factors.shape() != correction.shape() {
            return Err(Error::ShapeMismatch {
                expected: factors.shape(),
                got: correction.shape(),
            });
        }
        Ok(Self {
            variant: KernelVariant::Lcn { factors, correction },
            bp: None,
            lambda,
        })
    }

    /// Attaches the bipartite-matching extension for unbalanced transport.
    pub fn with_bp(mut self, bp: BpExtension) -> Result<Self> {
        let (n, m) = self.variant.shape();
        if bp.log_del_p.len() != n || bp.log_del_q.len() != m {
            return Err(Error::ShapeMismatch {
                expected: (n, m),
                got: (bp.log_del_p.len(), bp.log_del_q.len()),
            });
        }
        self.bp = Some(bp);
        Ok(self)
    }

    pub fn name(&self) -> &'static str {
        self.variant.name()
    }

    /// Shape of the original (non-extended) kernel.
    pub fn inner_shape(&self) -> (usize, usize) {
        self.variant.shape()
    }

    /// Shape of the operator the solver sees: `(n + m) x (m + n)` with BP.
    pub fn shape(&self) -> (usize, usize) {
        let (n, m) = self.inner_shape();
        if self.bp.is_some() {
            (n + m, m + n)
        } else {
            (n, m)
        }
    }

    fn inner_log_matvec(&self, log_t: &[f64]) -> Result<Vec<f64>> {
        match &self.variant {
            KernelVariant::Dense(k) => Ok(dense_log_matvec(&k.log_k, log_t)),
            KernelVariant::Sparse(k) => Ok(k.log_matvec(log_t)),
            KernelVariant::Nystrom(f) => {
                low_rank_log_apply(log_t, "nystrom", |t| f.matvec(t))
            }
            KernelVariant::Lcn { factors, correction } => low_rank_log_apply(log_t, "lcn", |t| {
                let mut y = factors.matvec(t);
                y += &correction.matvec(t);
                y
            }),
        }
    }

    fn inner_log_matvec_t(&self, log_s: &[f64]) -> Result<Vec<f64>> {
        match &self.variant {
            KernelVariant::Dense(k) => Ok(dense_log_matvec_t(&k.log_k, log_s)),
            KernelVariant::Sparse(k) => Ok(k.log_matvec_t(log_s)),
            KernelVariant::Nystrom(f) => {
                low_rank_log_apply(log_s, "nystrom", |s| f.matvec_t(s))
            }
            KernelVariant::Lcn { factors, correction } => low_rank_log_apply(log_s, "lcn", |s| {
                let mut y = factors.matvec_t(s);
                y += &correction.matvec_t(s);
                y
            }),
        }
    }

    /// `log(K e^{log_t})`. With BP the input is `[t_hat; t_check]` of
    /// length `m + n` and the output has length `n + m`.
    pub fn log_matvec(&self, log_t: &[f64]) -> Result<Vec<f64>> {
        let (rows, cols) = self.shape();
        if log_t.len() != cols {
            return Err(Error::DimensionMismatch(cols, log_t.len()));
        }
        let Some(bp) = &self.bp else {
            return self.inner_log_matvec(log_t);
        };
        let (n, m) = self.inner_shape();
        let (t_hat, t_check) = log_t.split_at(m);
        let mut out = self.inner_log_matvec(t_hat)?;
        for i in 0..n {
            out[i] = logaddexp(out[i], bp.log_del_p[i] + t_check[i]);
        }
        let total = logsumexp(t_check.iter().copied());
        out.extend((0..m).map(|j| logaddexp(bp.log_del_q[j] + t_hat[j], total)));
        debug_assert_eq!(out.len(), rows);
        Ok(out)
    }

    /// `log(K^T e^{log_s})`. With BP the input is `[s_hat; s_check]`.
    pub fn log_matvec_t(&self, log_s: &[f64]) -> Result<Vec<f64>> {
        let (rows, cols) = self.shape();
        if log_s.len() != rows {
            return Err(Error::DimensionMismatch(rows, log_s.len()));
        }
        let Some(bp) = &self.bp else {
            return self.inner_log_matvec_t(log_s);
        };
        let (n, m) = self.inner_shape();
        let (s_hat, s_check) = log_s.split_at(n);
        let mut out = self.inner_log_matvec_t(s_hat)?;
        for j in 0..m {
            out[j] = logaddexp(out[j], bp.log_del_q[j] + s_check[j]);
        }
        let total = logsumexp(s_check.iter().copied());
        out.extend((0..n).map(|i| logaddexp(bp.log_del_p[i] + s_hat[i], total)));
        debug_assert_eq!(out.len(), cols);
        Ok(out)
    }

    /// Linear-space matvec, mostly for tests and small problems.
    pub fn matvec(&self, t: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if t.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("matvec input must be non-negative".into()));
        }
        let log_t: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        Ok(self.log_matvec(&log_t)?.into_iter().map(f64::exp).collect())
    }

    /// Rows and columns that hold no positive entry at all. Only
    /// non-negative variants can have them; low-rank operators report none.
    pub fn structural_zeros(&self) -> Result<(Vec<bool>, Vec<bool>)> {
        let (rows, cols) = self.shape();
        match self.variant {
            KernelVariant::Dense(_) | KernelVariant::Sparse(_) => {
                let r = self.log_matvec(&vec![0.0; cols])?;
                let c = self.log_matvec_t(&vec![0.0; rows])?;
                Ok((
                    r.iter().map(|v| *v == f64::NEG_INFINITY).collect(),
                    c.iter().map(|v| *v == f64::NEG_INFINITY).collect(),
                ))
            }
            _ => Ok((vec![false; rows], vec![false; cols])),
        }
    }

    /// The full operator as a dense matrix (BP blocks included).
    pub fn densify(&self) -> Array2<f64> {
        let inner = match &self.variant {
            KernelVariant::Dense(k) => k.kernel(),
            KernelVariant::Sparse(k) => k.densify(),
            KernelVariant::Nystrom(f) => f.densify(),
            KernelVariant::Lcn { factors, correction } => factors.densify() + correction.densify(),
        };
        let Some(bp) = &self.bp else {
            return inner;
        };
        let (n, m) = self.inner_shape();
        let mut out = Array2::zeros((n + m, m + n));
        out.slice_mut(ndarray::s![..n, ..m]).assign(&inner);
        for i in 0..n {
            out[[i, m + i]] = bp.log_del_p[i].exp();
        }
        for j in 0..m {
            out[[n + j, j]] = bp.log_del_q[j].exp();
        }
        out.slice_mut(ndarray::s![n.., m..]).fill(1.0);
        out
    }

    /// Smallest strictly positive entry of the operator. Low-rank variants
    /// are densified, so this is meant for small problems.
    pub fn min_positive_entry(&self) -> Option<f64> {
        let min = match &self.variant {
            KernelVariant::Dense(k) => k
                .log_k
                .iter()
                .copied()
                .filter(|v| *v > f64::NEG_INFINITY)
                .fold(f64::INFINITY, f64::min)
                .exp(),
            KernelVariant::Sparse(k) => k.log_vals.iter().copied().fold(f64::INFINITY, f64::min).exp(),
            _ => self
                .densify()
                .iter()
                .copied()
                .filter(|v| *v > 0.0)
                .fold(f64::INFINITY, f64::min),
        };
        let min = match (&self.bp, &self.variant) {
            // ones block of the extension
            (Some(bp), KernelVariant::Dense(_) | KernelVariant::Sparse(_)) => bp
                .log_del_p
                .iter()
                .chain(bp.log_del_q.iter())
                .map(|v| v.exp())
                .filter(|v| *v > 0.0)
                .fold(min.min(1.0), f64::min),
            _ => min,
        };
        (min.is_finite() && min > 0.0).then_some(min)
    }
}

fn dense_log_matvec(log_k: &Array2<f64>, log_x: &[f64]) -> Vec<f64> {
    (0..log_k.nrows())
        .into_par_iter()
        .map(|i| logsumexp(log_k.row(i).iter().zip(log_x).map(|(k, x)| k + x)))
        .collect()
}

/// Column-wise log-sum-exp that walks the matrix in row-major order: one
/// pass for the column maxima, one for the shifted sums.
fn dense_log_matvec_t(log_k: &Array2<f64>, log_x: &[f64]) -> Vec<f64> {
    let m = log_k.ncols();
    let mut max = vec![f64::NEG_INFINITY; m];
    for (row, x) in log_k.rows().into_iter().zip(log_x) {
        for (mx, k) in max.iter_mut().zip(row.iter()) {
            *mx = mx.max(k + x);
        }
    }
    let mut acc = vec![0.0; m];
    for (row, x) in log_k.rows().into_iter().zip(log_x) {
        for ((a, k), mx) in acc.iter_mut().zip(row.iter()).zip(&max) {
            if *mx > f64::NEG_INFINITY {
                *a += (k + x - mx).exp();
            }
        }
    }
    max.iter()
        .zip(&acc)
        .map(|(mx, a)| if *mx == f64::NEG_INFINITY { *mx } else { mx + a.ln() })
        .collect()
}

/// Applies a linear operator to `e^{log_x}` and returns the logarithm of
/// the result, shifting by the largest input to stay within range.
fn low_rank_log_apply<F>(log_x: &[f64], variant: &'static str, apply: F) -> Result<Vec<f64>>
where
    F: FnOnce(ArrayView1<'_, f64>) -> Array1<f64>,
{
    let shift = max_finite(log_x);
    if !shift.is_finite() {
        return Err(Error::Stabilization {
            variant,
            detail: "scaling vector has no finite entry".into(),
        });
    }
    let x: Array1<f64> = log_x.iter().map(|v| (v - shift).exp()).collect();
    let y = apply(x.view());
    check_positive(&y, variant)?;
    Ok(y.iter().map(|v| v.ln() + shift).collect())
}
