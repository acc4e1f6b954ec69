#![allow(dead_code)]

use msdtn::experiments::{Case, CaseConfig, Geometry};
use msdtn::fem::Problem;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Preset case with a smaller fine mesh, for tests that run many solves.
pub fn case(case: Case, cells: Option<usize>) -> (CaseConfig, Geometry, Problem) {
    let mut cfg = CaseConfig::preset(case);
    if let Some(c) = cells {
        cfg.cells_per_subdomain = c;
    }
    let geo = cfg.geometry().unwrap();
    let problem = cfg.problem(*cfg.boundary_values.last().unwrap()).unwrap();
    (cfg, geo, problem)
}

/// Fourth-order central differences of `f` at `x` with step `rel (1 + |x_j|)`.
pub fn fd_jacobian(x: &[f64], rel: f64, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = rel * (1.0 + x[j].abs());
        let mut at = |t: f64| {
            xp[j] = x[j] + t * h;
            let v = f(&xp);
            xp[j] = x[j];
            v
        };
        let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
        for i in 0..m {
            jac[(i, j)] = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
        }
    }
    jac
}

/// Largest entrywise error `|a - b| / max(|b|, 1e-3 max|b|)`. Entries far below
/// the matrix scale are compared against that scale, since their finite
/// difference carries only rounding noise.
pub fn rel_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let scale = b.amax();
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let den = y.abs().max(1e-3 * scale);
            if den == 0.0 { (x - y).abs() } else { (x - y).abs() / den }
        })
        .fold(0.0, f64::max)
}
