//! Sparse kernel `K^sp` on an LSH pattern and the LCN correction
//! `K^sp_Δ = K^sp - K^sp_Nys`.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{check_lambda, CostFunction, PointSet};
use crate::logsumexp::logsumexp;
use crate::lsh::NeighborPairs;
use crate::nystrom::NystromFactors;

/// Kernel entries stored only on a pattern; everything else is zero
/// (infinite cost).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernel {
    pub pattern: NeighborPairs,
    /// `log K_ij` per stored pair, in pattern order.
    pub log_vals: Vec<f64>,
    pub lambda: f64,
}

pub fn build_sparse(
    p: &PointSet,
    q: &PointSet,
    pairs: &NeighborPairs,
    cost: CostFunction,
    lambda: f64,
) -> Result<SparseKernel> {
    check_lambda(lambda)?;
    if pairs.shape() != (p.len(), q.len()) {
        return Err(Error::ShapeMismatch {
            expected: (p.len(), q.len()),
            got: pairs.shape(),
        });
    }
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(p.dim(), q.dim()));
    }
    cost.check_inputs(p)?;
    cost.check_inputs(q)?;
    let rows: Vec<Vec<f64>> = (0..p.len())
        .into_par_iter()
        .map(|i| {
            pairs
                .row(i)
                .iter()
                .map(|&j| cost.log_kernel(p.point(i), q.point(j as usize), lambda))
                .collect()
        })
        .collect();
    Ok(SparseKernel {
        pattern: pairs.clone(),
        log_vals: rows.into_iter().flatten().collect(),
        lambda,
    })
}

impl SparseKernel {
    pub fn from_parts(pattern: NeighborPairs, log_vals: Vec<f64>, lambda: f64) -> Result<Self> {
        if pattern.len() != log_vals.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for {} pattern entries",
                log_vals.len(),
                pattern.len()
            )));
        }
        if log_vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse kernel values"));
        }
        Ok(Self {
            pattern,
            log_vals,
            lambda,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pattern.shape()
    }

    /// `log(K e^{log_t})`, row-wise log-sum-exp over stored entries. Rows
    /// with no entries yield `-inf`.
    pub fn log_matvec(&self, log_t: &[f64]) -> Vec<f64> {
        let (n, _) = self.shape();
        let ptr = self.pattern.row_ptr();
        let cols = self.pattern.cols();
        (0..n)
            .into_par_iter()
            .map(|i| logsumexp((ptr[i]..ptr[i + 1]).map(|k| self.log_vals[k] + log_t[cols[k] as usize])))
            .collect()
    }

    /// `log(K^T e^{log_s})`.
    pub fn log_matvec_t(&self, log_s: &[f64]) -> Vec<f64> {
        let (_, m) = self.shape();
        (0..m)
            .into_par_iter()
            .map(|j| logsumexp(self.pattern.col_entries(j).map(|(i, k)| self.log_vals[k] + log_s[i])))
            .collect()
    }

    /// Linear-space product `K t`.
    pub fn matvec(&self, t: ArrayView1<'_, f64>) -> Array1<f64> {
        let (n, _) = self.shape();
        let ptr = self.pattern.row_ptr();
        let cols = self.pattern.cols();
        Array1::from_iter((0..n).map(|i| {
            (ptr[i]..ptr[i + 1])
                .map(|k| self.log_vals[k].exp() * t[cols[k] as usize])
                .sum::<f64>()
        }))
    }

    pub fn densify(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.shape());
        for ((i, j), v) in self.pattern.iter().zip(&self.log_vals) {
            out[[i, j]] = v.exp();
        }
        out
    }

    /// CSV rows `i,j,logK`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["i", "j", "logK"])?;
        for ((i, j), v) in self.pattern.iter().zip(&self.log_vals) {
            wr.write_record([i.to_string(), j.to_string(), format!("{v:?}")])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Sparse correction on the same pattern as the sparse kernel. Besides
/// `delta`, both of its terms are kept because the analytic gradients are
/// taken with respect to each of them separately.
#[derive(Debug, Clone, PartialEq)]
pub struct LcnCorrection {
    pub pattern: NeighborPairs,
    /// `log K^sp_ij` (exact kernel) per stored pair.
    pub log_sparse: Vec<f64>,
    /// `K_Nys,ij` per stored pair (linear space, any sign).
    pub nystrom: Vec<f64>,
    /// `K_ij - K_Nys,ij`.
    pub delta: Vec<f64>,
}

pub fn build_correction(sparse: &SparseKernel, factors: &NystromFactors) -> Result<LcnCorrection> {
    if sparse.shape() != factors.shape() {
        return Err(Error::ShapeMismatch {
            expected: factors.shape(),
            got: sparse.shape(),
        });
    }
    let nystrom: Vec<f64> = sparse.pattern.iter().map(|(i, j)| factors.entry(i, j)).collect();
    LcnCorrection::from_parts(sparse.pattern.clone(), sparse.log_vals.clone(), nystrom)
}

impl LcnCorrection {
    pub fn from_parts(pattern: NeighborPairs, log_sparse: Vec<f64>, nystrom: Vec<f64>) -> Result<Self> {
        if log_sparse.len() != pattern.len() || nystrom.len() != pattern.len() {
            return Err(Error::InvalidParameter("correction values do not match the pattern".into()));
        }
        let delta: Vec<f64> = log_sparse.iter().zip(&nystrom).map(|(l, k)| l.exp() - k).collect();
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stabilization {
                variant: "lcn",
                detail: "sparse correction overflowed; kernel values exceed the float range".into(),
            });
        }
        Ok(Self {
            pattern,
            log_sparse,
            nystrom,
            delta,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pattern.shape()
    }

    /// Largest `|delta|`, useful for spotting cancellation.
    pub fn max_abs_delta(&self) -> f64 {
        self.delta.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    /// `K^sp_Δ t` in linear space.
    pub fn matvec(&self, t: ArrayView1<'_, f64>) -> Array1<f64> {
        let (n, _) = self.shape();
        let ptr = self.pattern.row_ptr();
        let cols = self.pattern.cols();
        let out: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| (ptr[i]..ptr[i + 1]).map(|k| self.delta[k] * t[cols[k] as usize]).sum())
            .collect();
        Array1::from(out)
    }

    /// `K^sp_Δ^T s`.
    pub fn matvec_t(&self, s: ArrayView1<'_, f64>) -> Array1<f64> {
        let (_, m) = self.shape();
        let out: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|j| self.pattern.col_entries(j).map(|(i, k)| self.delta[k] * s[i]).sum())
            .collect();
        Array1::from(out)
    }

    pub fn densify(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.shape());
        for ((i, j), v) in self.pattern.iter().zip(&self.delta) {
            out[[i, j]] = *v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cost, build_kernel};
    use crate::nystrom::{build_factors, LandmarkSet};
    use ndarray::{array, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, d: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointSet::new(Array2::from_shape_simple_fn((n, d), || rng.random::<f64>()), "r").unwrap()
    }

    fn random_pattern(n: usize, m: usize, density: f64, seed: u64) -> NeighborPairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .filter(|_| rng.random::<f64>() < density)
            .collect();
        NeighborPairs::from_pairs(n, m, pairs).unwrap()
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |x, y| x.max(y.abs()))
    }

    #[test]
    fn full_pattern_equals_dense() {
        let p = random_set(5, 2, 1);
        let q = random_set(4, 2, 2);
        let s = build_sparse(&p, &q, &NeighborPairs::full(5, 4), CostFunction::Euclidean, 0.3).unwrap();
        let k = build_kernel(&build_cost(&p, &q, CostFunction::Euclidean).unwrap(), 0.3).unwrap();
        assert!(max_abs(&(&s.densify() - &k.kernel())) < 1e-15);
    }

    #[test]
    fn empty_and_diagonal_patterns() {
        let p = random_set(3, 2, 3);
        let s = build_sparse(&p, &p, &NeighborPairs::empty(3, 3), CostFunction::Euclidean, 1.0).unwrap();
        assert_eq!(s.densify(), Array2::<f64>::zeros((3, 3)));
        assert_eq!(s.log_matvec(&[0.0; 3]), vec![f64::NEG_INFINITY; 3]);
        let diag = NeighborPairs::from_pairs(3, 3, (0..3).map(|i| (i, i))).unwrap();
        let s = build_sparse(&p, &p, &diag, CostFunction::Euclidean, 1.0).unwrap();
        assert_eq!(s.log_vals, vec![0.0; 3]);
    }

    #[test]
    fn identity_matvec_and_empty_row() {
        let pattern = NeighborPairs::from_pairs(2, 2, [(0, 0), (1, 1)]).unwrap();
        let s = SparseKernel::from_parts(pattern, vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(s.matvec(array![2.0, 3.0].view()), array![2.0, 3.0]);
        let pattern = NeighborPairs::from_pairs(2, 2, [(0, 0), (0, 1)]).unwrap();
        let s = SparseKernel::from_parts(pattern, vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(s.matvec(array![2.0, 3.0].view()), array![5.0, 0.0]);
    }

    #[test]
    fn log_matvec_matches_densified() {
        let p = random_set(8, 3, 4);
        let q = random_set(8, 3, 5);
        let pattern = random_pattern(8, 8, 0.4, 6);
        let s = build_sparse(&p, &q, &pattern, CostFunction::Euclidean, 0.25).unwrap();
        let dense = s.densify();
        let t = Array1::from_iter((0..8).map(|j| 0.2 + 0.3 * j as f64));
        let log_t: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        let want = dense.dot(&t);
        let got = s.log_matvec(&log_t);
        for i in 0..8 {
            if want[i] == 0.0 {
                assert_eq!(got[i], f64::NEG_INFINITY);
            } else {
                assert!((got[i].exp() - want[i]).abs() <= 1e-12 * want[i].max(1.0));
            }
        }
        let want_t = dense.t().dot(&t);
        let got_t = s.log_matvec_t(&log_t);
        for j in 0..8 {
            assert!((got_t[j].exp() - want_t[j]).abs() <= 1e-12 * want_t[j].max(1.0));
        }
        assert!((s.matvec(t.view()) - &want).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn correction_makes_pattern_exact() {
        let p = random_set(10, 2, 7);
        let q = random_set(10, 2, 8);
        let lambda = 0.5;
        let lm = LandmarkSet::explicit(p.points().select(Axis(0), &[0, 4, 7])).unwrap();
        let f = build_factors(&p, &q, &lm, CostFunction::Euclidean, lambda).unwrap();
        let pattern = random_pattern(10, 10, 0.3, 9);
        let s = build_sparse(&p, &q, &pattern, CostFunction::Euclidean, lambda).unwrap();
        let c = build_correction(&s, &f).unwrap();
        let k = build_kernel(&build_cost(&p, &q, CostFunction::Euclidean).unwrap(), lambda)
            .unwrap()
            .kernel();
        let lcn = f.densify() + c.densify();
        let nys = f.densify();
        for i in 0..10 {
            for j in 0..10 {
                let want = if pattern.contains(i, j) { k[[i, j]] } else { nys[[i, j]] };
                assert!((lcn[[i, j]] - want).abs() < 1e-12);
            }
        }
        let t = Array1::from_iter((0..10).map(|j| 1.0 + j as f64));
        let diff = &c.matvec(t.view()) - &c.densify().dot(&t);
        assert!(diff.iter().all(|v| v.abs() < 1e-12));
        let diff = &c.matvec_t(t.view()) - &c.densify().t().dot(&t);
        assert!(diff.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn correction_limits() {
        let p = random_set(6, 2, 10);
        let q = random_set(6, 2, 11);
        let pattern = random_pattern(6, 6, 0.5, 12);
        let s = build_sparse(&p, &q, &pattern, CostFunction::Euclidean, 0.3).unwrap();
        // all points as landmarks: the correction vanishes
        let lm = LandmarkSet::explicit(p.union(&q).unwrap().points().to_owned()).unwrap();
        let f = build_factors(&p, &q, &lm, CostFunction::Euclidean, 0.3).unwrap();
        let c = build_correction(&s, &f).unwrap();
        assert!(c.max_abs_delta() < 1e-8);
        // rank-0 Nyström: the correction is the sparse kernel itself
        let c = build_correction(&s, &NystromFactors::zero(6, 6)).unwrap();
        for (d, l) in c.delta.iter().zip(&s.log_vals) {
            assert_eq!(*d, l.exp());
        }
    }

    #[test]
    fn correction_overflow_is_reported() {
        let pattern = NeighborPairs::full(1, 1);
        let err = LcnCorrection::from_parts(pattern, vec![1000.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::Stabilization { .. }));
    }

    #[test]
    fn csv_export() {
        let pattern = NeighborPairs::from_pairs(2, 2, [(1, 0)]).unwrap();
        let s = SparseKernel::from_parts(pattern, vec![-0.5], 1.0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j,logK\n1,0,-0.5\n");
    }
}
