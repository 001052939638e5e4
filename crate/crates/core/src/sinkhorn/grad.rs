//! Analytic gradients of the converged Sinkhorn distance.
//!
//! At the optimum `d` depends on the kernel only through `-lambda s^T K t`,
//! so `dd/dK_ij = -lambda s_i t_j`. Everything below follows from the chain
//! rule for the respective parametrization of `K`.

use ndarray::{Array1, Array2, Axis};

use super::{balance_shift, KernelOperator, KernelVariant, Plan, SinkhornResult};
use crate::error::{Error, Result};
use crate::lsh::NeighborPairs;

#[derive(Debug, Clone, PartialEq)]
pub enum CostGradient {
    /// `dd/dC = P`.
    Dense(Array2<f64>),
    /// `dd/dC_ij = P_ij` on the stored pairs.
    Sparse {
        pattern: NeighborPairs,
        values: Vec<f64>,
    },
    /// `dd/dU` and `dd/dW` of `K = U W`.
    Nystrom { u: Array2<f64>, w: Array2<f64> },
    /// Low-rank gradients plus those with respect to the stored
    /// `log K^sp` and `log K^sp_Nys` entries, in pattern order.
    Lcn {
        u: Array2<f64>,
        w: Array2<f64>,
        log_sparse: Vec<f64>,
        log_sparse_nys: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub grad: CostGradient,
    /// Set when the solve stopped before reaching its tolerance; the
    /// envelope argument behind these formulas then only holds
    /// approximately.
    pub stale: bool,
}

pub fn grad_cost(op: &KernelOperator, result: &SinkhornResult) -> Result<Gradient> {
    if op.bp.is_some() {
        return Err(Error::InvalidParameter("gradients are not available for BP-extended operators".into()));
    }
    let lambda = result.lambda;
    let log_s = result.log_s.as_slice().expect("contiguous");
    let log_t = result.log_t.as_slice().expect("contiguous");
    let grad = match (&op.variant, &result.plan) {
        (KernelVariant::Dense(_), Plan::Dense(p)) => CostGradient::Dense(p.clone()),
        (KernelVariant::Sparse(_), Plan::Sparse { pattern, values }) => CostGradient::Sparse {
            pattern: pattern.clone(),
            values: values.clone(),
        },
        (KernelVariant::Nystrom(f), Plan::LowRank { pu, pw, .. }) => {
            let (u, w) = low_rank_grads(&f.u, &f.w, pu, pw, log_s, log_t, lambda);
            CostGradient::Nystrom { u, w }
        }
        (KernelVariant::Lcn { factors, .. }, Plan::LowRank { pu, pw, correction: Some(c) }) => {
            let (u, w) = low_rank_grads(&factors.u, &factors.w, pu, pw, log_s, log_t, lambda);
            // K_LCN = U W + K^sp - K^sp_Nys; the subtracted term flips sign
            CostGradient::Lcn {
                u,
                w,
                log_sparse: c.sparse.iter().map(|v| -lambda * v).collect(),
                log_sparse_nys: c.nystrom.iter().map(|v| lambda * v).collect(),
            }
        }
        _ => {
            return Err(Error::InvalidParameter(
                "result does not belong to this operator".into(),
            ))
        }
    };
    Ok(Gradient {
        grad,
        stale: !result.converged,
    })
}

/// `dd/dU = -lambda s (W t)^T` and `dd/dW = -lambda (U^T s) t^T`, using the
/// balanced factors `pu = diag(s e^{-a}) U`, `pw = W diag(t e^{a})` so that
/// no scaling is formed on its own.
fn low_rank_grads(
    u: &Array2<f64>,
    w: &Array2<f64>,
    pu: &Array2<f64>,
    pw: &Array2<f64>,
    log_s: &[f64],
    log_t: &[f64],
    lambda: f64,
) -> (Array2<f64>, Array2<f64>) {
    let a = balance_shift(log_s, log_t);
    let s: Array1<f64> = log_s.iter().map(|v| (v - a).exp()).collect();
    let t: Array1<f64> = log_t.iter().map(|v| (v + a).exp()).collect();
    let wt = pw.sum_axis(Axis(1));
    let us = pu.sum_axis(Axis(0));
    let mut gu = Array2::zeros(u.dim());
    for ((i, k), g) in gu.indexed_iter_mut() {
        *g = -lambda * s[i] * wt[k];
    }
    let mut gw = Array2::zeros(w.dim());
    for ((k, j), g) in gw.indexed_iter_mut() {
        *g = -lambda * us[k] * t[j];
    }
    (gu, gw)
}

#[cfg(test)]
mod tests {
    use super::super::{sinkhorn, SinkhornOptions};
    use super::*;
    use crate::geometry::{build_kernel, DenseCost, Marginals};
    use ndarray::array;

    #[test]
    fn trivial_dense_gradients() {
        let op = KernelOperator::dense(build_kernel(&DenseCost { values: array![[3.0]] }, 1.0).unwrap());
        let r = sinkhorn(&op, &Marginals::uniform(1, 1), &SinkhornOptions::default()).unwrap();
        let g = grad_cost(&op, &r).unwrap();
        assert_eq!(g.grad, CostGradient::Dense(array![[1.0]]));
        assert!(!g.stale);

        let op = KernelOperator::dense(build_kernel(&DenseCost { values: Array2::zeros((2, 2)) }, 1.0).unwrap());
        let r = sinkhorn(&op, &Marginals::uniform(2, 2), &SinkhornOptions::default()).unwrap();
        match grad_cost(&op, &r).unwrap().grad {
            CostGradient::Dense(p) => assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-14)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unconverged_gradient_is_stale() {
        let c = array![[0.0, 1.0, 4.0], [2.0, 0.5, 0.1], [1.0, 3.0, 0.2]];
        let op = KernelOperator::dense(build_kernel(&DenseCost { values: c }, 0.1).unwrap());
        let marg = Marginals::new(array![0.2, 0.3, 0.5], array![0.6, 0.1, 0.3]).unwrap();
        let r = sinkhorn(&op, &marg, &SinkhornOptions::fixed_iters(1)).unwrap();
        assert!(grad_cost(&op, &r).unwrap().stale);
    }
}
