//! Value, derivative and monotonicity loss terms for one output component.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::SurrogateNet;
use crate::error::{Error, Result};

/// Which Jacobian entries the monotonicity term constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Monotonicity {
    /// `∂_l ≥ 0` and `∂_k ≤ 0` for `k ≠ l`.
    FullSign,
    /// `∂_l ≥ 0` only.
    DiagonalOnly,
}

/// Quadrature of the monotonicity integral over the training box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    /// Midpoints of a regular grid with `per_axis` cells per axis.
    Grid { per_axis: usize },
    /// Uniform points, redrawn every training step.
    MonteCarlo { points: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub c0: f64,
    pub c1: f64,
    pub c_mon: f64,
    pub monotonicity: Monotonicity,
    pub quadrature: Quadrature,
    pub u_min: f64,
    pub u_max: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.c0, self.c1, self.c_mon];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {weights:?}")));
        }
        let n = match self.quadrature {
            Quadrature::Grid { per_axis } => per_axis,
            Quadrature::MonteCarlo { points } => points,
        };
        if n == 0 {
            return Err(Error::Config("monotonicity quadrature needs at least one point".into()));
        }
        if !(self.u_max > self.u_min) {
            return Err(Error::Config(format!("empty training box [{}, {}]", self.u_min, self.u_max)));
        }
        Ok(())
    }

    pub fn volume(&self, d: usize) -> f64 {
        (self.u_max - self.u_min).powi(d as i32)
    }
}

/// Training targets of one component: values `f_l(u^s)` and gradients `∇f_l(u^s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub inputs: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub gradients: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub l0: f64,
    pub l1: f64,
    pub lmon: f64,
    pub total: f64,
}

/// Midpoints of a regular `per_axis^d` grid over `[lo, hi]^d`.
pub fn midpoint_grid(d: usize, per_axis: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let h = (hi - lo) / per_axis as f64;
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut k| {
            (0..d)
                .map(|_| {
                    let c = k % per_axis;
                    k /= per_axis;
                    lo + (c as f64 + 0.5) * h
                })
                .collect()
        })
        .collect()
}

pub fn monte_carlo_points<R: Rng>(rng: &mut R, d: usize, n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

/// Penalty integrand at one point and its derivative w.r.t. each gradient entry.
fn penalty(grad: &[f64], l: usize, variant: Monotonicity, dpen: &mut [f64]) -> f64 {
    let mut p = 0.0;
    for (k, (&g, dp)) in grad.iter().zip(dpen.iter_mut()).enumerate() {
        let v = if k == l {
            g.min(0.0)
        } else if variant == Monotonicity::FullSign {
            g.max(0.0)
        } else {
            0.0
        };
        p += v * v;
        *dp = 2.0 * v;
    }
    p
}

/// Penalty integrand of the monotonicity term at each point.
pub fn monotonicity_integrand(net: &SurrogateNet, points: &[Vec<f64>], variant: Monotonicity) -> Result<Vec<f64>> {
    let d = net.input_dim();
    let tape = net.forward_batch(points, true)?;
    let mut grad = vec![0.0; d];
    let mut dpen = vec![0.0; d];
    Ok((0..points.len())
        .map(|s| {
            for (j, g) in grad.iter_mut().enumerate() {
                *g = tape.gradient(net, s, j);
            }
            penalty(&grad, net.component(), variant, &mut dpen)
        })
        .collect())
}

/// `L = c0 L0 + c1 L1 + c_mon Lmon` and, when requested, `∂L/∂θ`.
///
/// `mon_points` are the quadrature nodes of the monotonicity integral, each
/// weighted by `volume / mon_points.len()`. Nodes with a vanishing penalty
/// have a zero adjoint, so when few are active the reverse pass is run on
/// the active nodes only.
pub fn loss(
    net: &SurrogateNet,
    targets: &Targets,
    cfg: &LossConfig,
    mon_points: &[Vec<f64>],
    want_gradient: bool,
) -> Result<(LossTerms, Option<Vec<f64>>)> {
    let d = net.input_dim();
    let l = net.component();
    let n_s = targets.inputs.len();
    if n_s == 0 || targets.values.len() != n_s || targets.gradients.len() != n_s {
        return Err(Error::InvalidInput("inconsistent or empty training targets".into()));
    }
    let scaling = net.scaling();
    let grad_factor = scaling.output_scale * scaling.input_factor();
    let mut terms = LossTerms::default();
    let mut gradient = want_gradient.then(|| vec![0.0; net.n_params()]);

    let tape = net.forward_batch(&targets.inputs, true)?;
    let mut out_bar = vec![0.0; (1 + d) * n_s];
    let w_data = 1.0 / n_s as f64;
    for s in 0..n_s {
        let e0 = tape.value(net, s) - targets.values[s];
        terms.l0 += w_data * e0 * e0;
        out_bar[s] = cfg.c0 * w_data * 2.0 * e0 * scaling.output_scale;
        for j in 0..d {
            let e1 = tape.gradient(net, s, j) - targets.gradients[s][j];
            terms.l1 += w_data * e1 * e1;
            out_bar[(j + 1) * n_s + s] = cfg.c1 * w_data * 2.0 * e1 * grad_factor;
        }
    }
    if let Some(g) = gradient.as_mut() {
        net.backward(&tape, &out_bar, g);
    }

    if cfg.c_mon > 0.0 && !mon_points.is_empty() {
        let m = mon_points.len();
        let w_mon = cfg.volume(d) / m as f64;
        let tape = net.forward_batch(mon_points, true)?;
        let mut grad = vec![0.0; d];
        let mut dpen = vec![0.0; d];
        let mut active = Vec::new();
        for s in 0..m {
            for (j, g) in grad.iter_mut().enumerate() {
                *g = tape.gradient(net, s, j);
            }
            let p = penalty(&grad, l, cfg.monotonicity, &mut dpen);
            if p > 0.0 {
                terms.lmon += w_mon * p;
                active.push((s, dpen.clone()));
            }
        }
        if let Some(g) = gradient.as_mut().filter(|_| !active.is_empty()) {
            let scale = cfg.c_mon * w_mon * grad_factor;
            if 2 * active.len() >= m {
                let mut bar = vec![0.0; (1 + d) * m];
                for (s, dp) in &active {
                    for j in 0..d {
                        bar[(j + 1) * m + s] = scale * dp[j];
                    }
                }
                net.backward(&tape, &bar, g);
            } else {
                let pts: Vec<&[f64]> = active.iter().map(|(s, _)| mon_points[*s].as_slice()).collect();
                let sub = net.forward_batch(&pts, true)?;
                let b = pts.len();
                let mut bar = vec![0.0; (1 + d) * b];
                for (r, (_, dp)) in active.iter().enumerate() {
                    for j in 0..d {
                        bar[(j + 1) * b + r] = scale * dp[j];
                    }
                }
                net.backward(&sub, &bar, g);
            }
        }
    }
    terms.total = cfg.c0 * terms.l0 + cfg.c1 * terms.l1 + cfg.c_mon * terms.lmon;
    if !terms.total.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok((terms, gradient))
}
