//! Synthetic point-cloud generators.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;

/// Maximum rejection-sampling attempts per cluster center.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn unit_direction<R: Rng>(rng: &mut R, d: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Uniform sample of the `d`-ball of the given radius: a normalized
/// Gaussian direction scaled by `radius * U^{1/d}`.
fn ball_point<R: Rng>(rng: &mut R, d: usize, radius: f64) -> Array1<f64> {
    let u: f64 = rng.random();
    unit_direction(rng, d) * (radius * u.powf(1.0 / d as f64))
}

fn check_counts(n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("point count"));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    Ok(())
}

/// `n` points uniformly distributed in the unit `d`-ball.
pub fn uniform_ball(n: usize, d: usize, seed: u64, stream: u64) -> Result<PointSet> {
    check_counts(n, d)?;
    let mut rng = rng_for(seed, stream);
    let mut pts = Array2::zeros((n, d));
    for mut row in pts.rows_mut() {
        row.assign(&ball_point(&mut rng, d, 1.0));
    }
    PointSet::new(pts, format!("uniform-ball-{seed}-{stream}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ClusterLayout {
    pub dim: usize,
    pub clusters: usize,
    /// Minimum distance between cluster centers.
    pub separation: f64,
    /// Maximum distance of a point from its center.
    pub radius: f64,
    /// Side of the box `[0, box_size]^d` the centers are drawn from;
    /// defaults to `2 * separation * ceil(clusters^{1/d})`.
    #[serde(default)]
    pub box_size: Option<f64>,
}

impl ClusterLayout {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.clusters == 0 {
            return Err(Error::InvalidParameter("clusters and dimension must be positive".into()));
        }
        if !(self.separation > 0.0 && self.radius >= 0.0 && self.separation.is_finite() && self.radius.is_finite()) {
            return Err(Error::InvalidParameter("separation must be positive and radius non-negative".into()));
        }
        Ok(())
    }

    fn side(&self) -> f64 {
        let per_axis = (self.clusters as f64).powf(1.0 / self.dim as f64).ceil();
        self.box_size.unwrap_or(2.0 * self.separation * per_axis)
    }

    /// Centers drawn uniformly from the box, each accepted only if it keeps
    /// the separation to all previous ones.
    pub fn place_centers(&self, seed: u64) -> Result<Array2<f64>> {
        self.validate()?;
        let mut rng = rng_for(seed, 0xC);
        let side = self.side();
        let mut centers: Vec<Array1<f64>> = Vec::with_capacity(self.clusters);
        for c in 0..self.clusters {
            let mut placed = false;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let cand: Array1<f64> = (0..self.dim).map(|_| rng.random::<f64>() * side).collect();
                let ok = centers.iter().all(|o| {
                    let diff = o - &cand;
                    diff.dot(&diff).sqrt() >= self.separation
                });
                if ok {
                    centers.push(cand);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::Infeasible(format!(
                    "could not place center {c} of {} at separation {} inside a box of side {side} after {MAX_PLACEMENT_ATTEMPTS} attempts",
                    self.clusters, self.separation
                )));
            }
        }
        Ok(Array2::from_shape_fn((self.clusters, self.dim), |(i, j)| centers[i][j]))
    }

    /// Centers on a regular grid with spacing `separation`.
    pub fn grid_centers(&self) -> Result<Array2<f64>> {
        self.validate()?;
        let per_axis = (self.clusters as f64).powf(1.0 / self.dim as f64).ceil() as usize;
        let mut out = Array2::zeros((self.clusters, self.dim));
        for c in 0..self.clusters {
            let mut rest = c;
            for k in 0..self.dim {
                out[[c, k]] = (rest % per_axis) as f64 * self.separation;
                rest /= per_axis;
            }
        }
        Ok(out)
    }
}

/// `n` points spread round-robin over the given centers, each uniform in
/// the ball of radius `radius` around its center.
pub fn around_centers(centers: &Array2<f64>, n: usize, radius: f64, seed: u64, stream: u64) -> Result<PointSet> {
    let d = centers.ncols();
    check_counts(n, d)?;
    if centers.nrows() == 0 {
        return Err(Error::Empty("cluster centers"));
    }
    let mut rng = rng_for(seed, stream);
    let mut pts = Array2::zeros((n, d));
    for (i, mut row) in pts.rows_mut().into_iter().enumerate() {
        let c = centers.row(i % centers.nrows());
        row.assign(&(&c + &ball_point(&mut rng, d, radius)));
    }
    PointSet::new(pts, format!("clustered-{seed}-{stream}"))
}

/// Points on the sphere of radius `radius` around every center: the `2d`
/// axis-aligned extremes first, then random directions, `per_cluster`
/// points in total per center.
pub fn cluster_boundaries(centers: &Array2<f64>, per_cluster: usize, radius: f64, seed: u64) -> Result<PointSet> {
    let d = centers.ncols();
    check_counts(per_cluster * centers.nrows(), d)?;
    let mut rng = rng_for(seed, 0xB);
    let mut rows = Vec::with_capacity(per_cluster * centers.nrows());
    for c in centers.rows() {
        for k in 0..per_cluster {
            let dir = if k < 2 * d {
                let mut e = Array1::zeros(d);
                e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
                e
            } else {
                unit_direction(&mut rng, d)
            };
            rows.push((&c + &(dir * radius)).to_vec());
        }
    }
    PointSet::from_rows(&rows, format!("cluster-boundaries-{seed}"))
}
