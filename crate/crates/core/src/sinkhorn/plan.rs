//! Transport plans in the storage form matching each kernel variant.

use ndarray::{Array1, Array2};

use crate::lsh::NeighborPairs;

/// Sparse correction terms of an LCN plan, on the kernel's pattern:
/// `P^sp_ij = s_i K_ij t_j` and `P^sp_Nys,ij = s_i K_Nys,ij t_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanCorrection {
    pub pattern: NeighborPairs,
    pub sparse: Vec<f64>,
    pub nystrom: Vec<f64>,
}

impl PlanCorrection {
    /// `P^sp - P^sp_Nys` per stored pair.
    pub fn delta(&self) -> impl Iterator<Item = f64> + '_ {
        self.sparse.iter().zip(&self.nystrom).map(|(a, b)| a - b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    Dense(Array2<f64>),
    Sparse {
        pattern: NeighborPairs,
        values: Vec<f64>,
    },
    /// `P = P_U P_W (+ P^sp - P^sp_Nys)`, never formed densely by the solver.
    LowRank {
        pu: Array2<f64>,
        pw: Array2<f64>,
        correction: Option<PlanCorrection>,
    },
    /// Bipartite-matching plan split into quadrants. `del_p[i]` is the mass
    /// source `i` sends to deletion, `del_q[j]` the mass sink `j` receives
    /// from insertion and `eps_eps` the total mass of the deletion block.
    Bp {
        inner: Box<Plan>,
        del_p: Array1<f64>,
        del_q: Array1<f64>,
        eps_eps: f64,
    },
}

impl Plan {
    /// Shape of the original (non-extended) block.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Plan::Dense(p) => p.dim(),
            Plan::Sparse { pattern, .. } => pattern.shape(),
            Plan::LowRank { pu, pw, .. } => (pu.nrows(), pw.ncols()),
            Plan::Bp { inner, .. } => inner.shape(),
        }
    }

    /// Dense original block; BP deletion quadrants are dropped.
    pub fn densify(&self) -> Array2<f64> {
        match self {
            Plan::Dense(p) => p.clone(),
            Plan::Sparse { pattern, values } => {
                let mut out = Array2::zeros(pattern.shape());
                for ((i, j), v) in pattern.iter().zip(values) {
                    out[[i, j]] = *v;
                }
                out
            }
            Plan::LowRank { pu, pw, correction } => {
                let mut out = pu.dot(pw);
                if let Some(c) = correction {
                    for ((i, j), d) in c.pattern.iter().zip(c.delta()) {
                        out[[i, j]] += d;
                    }
                }
                out
            }
            Plan::Bp { inner, .. } => inner.densify(),
        }
    }

    /// `P 1`. For BP plans this is the transported plus deleted mass of
    /// every source point.
    pub fn row_sums(&self) -> Array1<f64> {
        match self {
            Plan::Dense(p) => p.sum_axis(ndarray::Axis(1)),
            Plan::Sparse { pattern, values } => {
                let ptr = pattern.row_ptr();
                (0..pattern.shape().0).map(|i| values[ptr[i]..ptr[i + 1]].iter().sum()).collect()
            }
            Plan::LowRank { pu, pw, correction } => {
                let mut out = pu.dot(&pw.sum_axis(ndarray::Axis(1)));
                if let Some(c) = correction {
                    for ((i, _), d) in c.pattern.iter().zip(c.delta()) {
                        out[i] += d;
                    }
                }
                out
            }
            Plan::Bp { inner, del_p, .. } => inner.row_sums() + del_p,
        }
    }

    /// `P^T 1`. For BP plans this includes the inserted mass.
    pub fn col_sums(&self) -> Array1<f64> {
        match self {
            Plan::Dense(p) => p.sum_axis(ndarray::Axis(0)),
            Plan::Sparse { pattern, values } => {
                let mut out = Array1::zeros(pattern.shape().1);
                for ((_, j), v) in pattern.iter().zip(values) {
                    out[j] += v;
                }
                out
            }
            Plan::LowRank { pu, pw, correction } => {
                let mut out = pw.t().dot(&pu.sum_axis(ndarray::Axis(0)));
                if let Some(c) = correction {
                    for ((_, j), d) in c.pattern.iter().zip(c.delta()) {
                        out[j] += d;
                    }
                }
                out
            }
            Plan::Bp { inner, del_q, .. } => inner.col_sums() + del_q,
        }
    }

    /// Total transported mass of the original block.
    pub fn mass(&self) -> f64 {
        match self {
            Plan::Bp { inner, .. } => inner.mass(),
            _ => self.row_sums().sum(),
        }
    }

    /// `||P 1 - p||_1 + ||P^T 1 - q||_1`, evaluated on the factored form.
    pub fn marginal_error(&self, p: &Array1<f64>, q: &Array1<f64>) -> f64 {
        let r = self.row_sums();
        let c = self.col_sums();
        let er: f64 = r.iter().zip(p).map(|(a, b)| (a - b).abs()).sum();
        let ec: f64 = c.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
        er + ec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn low_rank_sums_match_densified() {
        let pattern = NeighborPairs::from_pairs(2, 3, [(0, 1), (1, 2)]).unwrap();
        let plan = Plan::LowRank {
            pu: array![[0.1, 0.2], [0.3, 0.0]],
            pw: array![[1.0, 0.5, 0.0], [0.2, 0.2, 0.2]],
            correction: Some(PlanCorrection {
                pattern,
                sparse: vec![0.3, 0.05],
                nystrom: vec![0.1, 0.01],
            }),
        };
        let d = plan.densify();
        let rows = d.sum_axis(ndarray::Axis(1));
        let cols = d.sum_axis(ndarray::Axis(0));
        for (a, b) in plan.row_sums().iter().zip(rows.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in plan.col_sums().iter().zip(cols.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((d[[0, 1]] - (0.1 * 0.5 + 0.2 * 0.2 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn sparse_plan_sums() {
        let pattern = NeighborPairs::from_pairs(2, 2, [(0, 0), (0, 1), (1, 1)]).unwrap();
        let plan = Plan::Sparse {
            pattern,
            values: vec![0.25, 0.25, 0.5],
        };
        assert_eq!(plan.row_sums(), array![0.5, 0.5]);
        assert_eq!(plan.col_sums(), array![0.25, 0.75]);
        assert_eq!(plan.marginal_error(&array![0.5, 0.5], &array![0.5, 0.5]), 0.5);
    }
}
