//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Textbook Sinkhorn on dual potentials `f, g`:
/// `P_ij = exp((f_i + g_j - C_ij) / lambda)`.
pub struct Reference {
    pub plan: Array2<f64>,
    pub distance: f64,
    pub iters: usize,
}

pub fn reference_sinkhorn(c: &Array2<f64>, p: &Array1<f64>, q: &Array1<f64>, lambda: f64, tol: f64, max_iters: usize) -> Reference {
    let (n, m) = c.dim();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iters = 0;
    let plan = |f: &[f64], g: &[f64]| Array2::from_shape_fn((n, m), |(i, j)| ((f[i] + g[j] - c[[i, j]]) / lambda).exp());
    loop {
        iters += 1;
        for i in 0..n {
            f[i] = lambda * p[i].ln() - lambda * lse((0..m).map(|j| (g[j] - c[[i, j]]) / lambda));
        }
        for j in 0..m {
            g[j] = lambda * q[j].ln() - lambda * lse((0..n).map(|i| (f[i] - c[[i, j]]) / lambda));
        }
        let pl = plan(&f, &g);
        let err: f64 = pl
            .rows()
            .into_iter()
            .zip(p.iter())
            .map(|(r, pi)| (r.sum() - pi).abs())
            .sum::<f64>()
            + pl.columns().into_iter().zip(q.iter()).map(|(col, qj)| (col.sum() - qj).abs()).sum::<f64>();
        if err <= tol || iters >= max_iters {
            break;
        }
    }
    let pl = plan(&f, &g);
    let mut distance = 0.0;
    for (pij, cij) in pl.iter().zip(c.iter()) {
        if *pij > 0.0 {
            distance += pij * cij + lambda * pij * pij.ln();
        }
    }
    Reference { plan: pl, distance, iters }
}

pub fn random_marginal<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    let v = Array1::from_shape_fn(n, |_| 0.2 + rng.random::<f64>());
    let s = v.sum();
    v / s
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Heap's algorithm over all permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// 0 = no support, 1 = support, 2 = total support, by enumeration.
pub fn brute_force_support(n: usize, mask: &[Vec<bool>]) -> u8 {
    let perms: Vec<Vec<usize>> = permutations(n).into_iter().filter(|s| (0..n).all(|i| mask[i][s[i]])).collect();
    if perms.is_empty() {
        return 0;
    }
    let covered = (0..n).all(|i| (0..n).all(|j| !mask[i][j] || perms.iter().any(|s| s[i] == j)));
    if covered {
        2
    } else {
        1
    }
}
