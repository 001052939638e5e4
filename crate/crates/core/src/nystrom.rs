//! Landmark selection and the low-rank Nyström factorization
//! `K_Nys = U A^{-1} V`, stored as `U` and the precomputed `W = A^{-1} V`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_lambda, CostFunction, PointSet};
use crate::kmeans;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkMethod {
    /// Lloyd centroids of `X_p ∪ X_q`.
    #[default]
    Kmeans,
    /// Data points drawn by the k-means++ D² rule.
    KmeansPlusPlus,
    /// Landmarks supplied by the caller.
    Explicit,
}

/// Lloyd iterations used for k-means landmarks.
pub const LANDMARK_KMEANS_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub landmarks: Array2<f64>,
    pub method: LandmarkMethod,
    pub seed: u64,
}

impl LandmarkSet {
    pub fn explicit(landmarks: Array2<f64>) -> Result<Self> {
        if landmarks.nrows() == 0 || landmarks.ncols() == 0 {
            return Err(Error::Empty("landmark set"));
        }
        if landmarks.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("landmarks"));
        }
        Ok(Self {
            landmarks,
            method: LandmarkMethod::Explicit,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.landmarks.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.nrows() == 0
    }
}

pub fn select_landmarks(
    p: &PointSet,
    q: &PointSet,
    count: usize,
    method: LandmarkMethod,
    seed: u64,
) -> Result<LandmarkSet> {
    let union = p.union(q)?;
    if count == 0 || count > union.len() {
        return Err(Error::InvalidParameter(format!(
            "landmark count must be in 1..={}, got {count}",
            union.len()
        )));
    }
    let landmarks = match method {
        LandmarkMethod::Kmeans => {
            kmeans::kmeans(union.points(), count, LANDMARK_KMEANS_ITERS, seed)?.centroids
        }
        LandmarkMethod::KmeansPlusPlus => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = kmeans::kmeans_pp_indices(union.points(), count, &mut rng);
            union.points().select(Axis(0), &idx)
        }
        LandmarkMethod::Explicit => {
            return Err(Error::InvalidParameter(
                "explicit landmarks are built with LandmarkSet::explicit".into(),
            ))
        }
    };
    Ok(LandmarkSet {
        landmarks,
        method,
        seed,
    })
}

/// Low-rank kernel factors: `U` (`n x l`) and `W = A^{-1} V` (`l x m`).
#[derive(Debug, Clone, PartialEq)]
pub struct NystromFactors {
    pub u: Array2<f64>,
    pub w: Array2<f64>,
    /// Rough condition number of `A` taken from its Cholesky diagonal.
    pub cond_estimate: f64,
    /// Ridge actually added to the diagonal of `A` (0 if none was needed).
    pub jitter: f64,
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

pub fn build_factors(
    p: &PointSet,
    q: &PointSet,
    landmarks: &LandmarkSet,
    cost: CostFunction,
    lambda: f64,
) -> Result<NystromFactors> {
    check_lambda(lambda)?;
    let d = landmarks.landmarks.ncols();
    if p.dim() != d || q.dim() != d {
        return Err(Error::DimensionMismatch(d, if p.dim() != d { p.dim() } else { q.dim() }));
    }
    cost.check_inputs(p)?;
    cost.check_inputs(q)?;
    let lm = &landmarks.landmarks;
    let l = lm.nrows();
    let k = |a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>| (cost.log_kernel(a, b, lambda)).exp();
    let u = Array2::from_shape_fn((p.len(), l), |(i, a)| k(p.point(i), lm.row(a)));
    let v = Array2::from_shape_fn((l, q.len()), |(a, j)| k(lm.row(a), q.point(j)));
    let a = Array2::from_shape_fn((l, l), |(x, y)| k(lm.row(x), lm.row(y)));
    if u.iter().chain(v.iter()).chain(a.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Stabilization {
            variant: "nystrom",
            detail: "kernel evaluation overflowed".into(),
        });
    }
    let (w, cond_estimate, jitter) = solve_landmark_system(&a, &v)?;
    Ok(NystromFactors {
        u,
        w,
        cond_estimate,
        jitter,
    })
}

/// Solves `A W = V` through a Cholesky factorization, adding a growing
/// diagonal ridge whenever the factorization fails.
fn solve_landmark_system(a: &Array2<f64>, v: &Array2<f64>) -> Result<(Array2<f64>, f64, f64)> {
    let l = a.nrows();
    let am = DMatrix::from_fn(l, l, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let vm = DMatrix::from_fn(l, v.ncols(), |i, j| v[[i, j]]);
    let scale = am.trace() / l as f64;
    let mut jitter = 0.0;
    let mut next = JITTER_START * scale;
    loop {
        let mut shifted = am.clone();
        for i in 0..l {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = shifted.cholesky() {
            let diag: Vec<f64> = (0..l).map(|i| chol.l_dirty()[(i, i)]).collect();
            let max = diag.iter().copied().fold(0.0, f64::max);
            let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
            let cond = (max / min).powi(2);
            let wm = chol.solve(&vm);
            if wm.iter().all(|x| x.is_finite()) {
                let w = Array2::from_shape_fn((l, v.ncols()), |(i, j)| wm[(i, j)]);
                return Ok((w, cond, jitter));
            }
        }
        if next > JITTER_MAX * scale * (1.0 + 1e-9) {
            return Err(Error::Factorization { jitter });
        }
        jitter = next;
        next *= 10.0;
    }
}

impl NystromFactors {
    /// Factors assembled from explicit matrices (`u`: `n x l`, `w`: `l x m`).
    pub fn from_parts(u: Array2<f64>, w: Array2<f64>) -> Result<Self> {
        if u.ncols() != w.nrows() {
            return Err(Error::ShapeMismatch {
                expected: (u.ncols(), w.ncols()),
                got: w.dim(),
            });
        }
        if u.iter().chain(w.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Nystrom factors"));
        }
        Ok(Self {
            u,
            w,
            cond_estimate: f64::NAN,
            jitter: 0.0,
        })
    }

    /// Rank-0 factors: `K_Nys = 0`.
    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            u: Array2::zeros((n, 0)),
            w: Array2::zeros((0, m)),
            cond_estimate: 1.0,
            jitter: 0.0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.u.nrows(), self.w.ncols())
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// `K_Nys[i, j] = sum_a U[i, a] W[a, j]`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.u.row(i).dot(&self.w.column(j))
    }

    /// `U (W t)` in `O((n + m) l)`.
    pub fn matvec(&self, t: ArrayView1<'_, f64>) -> Array1<f64> {
        self.u.dot(&self.w.dot(&t))
    }

    /// `W^T (U^T s)`.
    pub fn matvec_t(&self, s: ArrayView1<'_, f64>) -> Array1<f64> {
        self.w.t().dot(&self.u.t().dot(&s))
    }

    /// Like [`matvec`](Self::matvec) but rejects non-positive outputs for a
    /// strictly positive input, since Sinkhorn cannot proceed from them.
    pub fn checked_matvec(&self, t: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let out = self.matvec(t);
        check_positive(&out, "nystrom")?;
        Ok(out)
    }

    pub fn densify(&self) -> Array2<f64> {
        self.u.dot(&self.w)
    }
}

pub(crate) fn check_positive(out: &Array1<f64>, variant: &'static str) -> Result<()> {
    if let Some((index, &value)) = out.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveKernel {
            variant,
            index,
            value,
        });
    }
    Ok(())
}
