//! Damped Newton iteration with Armijo backtracking on the residual norm.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{norm2, norm_inf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Convergence when `‖F‖_∞ ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Sufficient decrease parameter.
    pub armijo: f64,
    pub backtrack: f64,
    pub max_halvings: usize,
}

impl NewtonConfig {
    pub fn with_tol(tol: f64) -> Self {
        NewtonConfig { tol, ..Self::default() }
    }
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tol: 1e-10, max_iter: 100, armijo: 1e-4, backtrack: 0.5, max_halvings: 30 }
    }
}

/// One row per Newton iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual_norm: f64,
    /// Norm of the step that produced this iterate (0 for the initial guess).
    pub step_norm: f64,
    pub error_vs_reference: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonTrace {
    pub rows: Vec<TraceRow>,
}

impl NewtonTrace {
    pub fn iterations(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.residual_norm)
    }

    /// First iteration whose error against the reference is at most `level`.
    pub fn iterations_to_error(&self, level: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.error_vs_reference.is_some_and(|e| e <= level))
            .map(|r| r.iteration)
    }

    /// CSV with columns `iteration,residual_norm,step_norm,error_vs_reference,seconds`.
    /// With `timings == false` the seconds column is left empty so that the
    /// file only depends on the computation.
    pub fn to_csv(&self, timings: bool) -> String {
        let mut s = String::from("iteration,residual_norm,step_norm,error_vs_reference,seconds\n");
        for r in &self.rows {
            let err = r.error_vs_reference.map(|e| format!("{e:e}")).unwrap_or_default();
            let secs = if timings { format!("{:.6}", r.seconds) } else { String::new() };
            let _ = writeln!(s, "{},{:e},{:e},{},{}", r.iteration, r.residual_norm, r.step_norm, err, secs);
        }
        s
    }
}

/// A factorized Jacobian.
pub trait LinearStep {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>>;
}

impl LinearStep for crate::linalg::BandLu {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(crate::linalg::BandLu::solve(self, rhs))
    }
}

impl LinearStep for nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.is_empty() {
            return Ok(Vec::new());
        }
        nalgebra::LU::solve(self, &nalgebra::DVector::from_column_slice(rhs))
            .map(|x| x.as_slice().to_vec())
            .ok_or_else(|| Error::SingularJacobian("dense LU".into()))
    }
}

pub trait NewtonSystem {
    type Step: LinearStep;

    /// Residual at `x`, plus the factorized Jacobian when requested.
    fn evaluate(&mut self, x: &[f64], jacobian: bool) -> Result<(Vec<f64>, Option<Self::Step>)>;
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub trace: NewtonTrace,
}

/// Callback invoked on every iterate; may return an error measure.
pub type Observer<'a> = &'a mut dyn FnMut(&[f64]) -> Result<Option<f64>>;

fn recoverable(e: &Error) -> bool {
    matches!(e.root(), Error::NonFinite(_) | Error::NonConvergence { .. } | Error::SingularJacobian(_))
}

/// Runs damped Newton from `x0`.
pub fn solve<S: NewtonSystem>(
    system: &mut S,
    x0: Vec<f64>,
    cfg: &NewtonConfig,
    mut observer: Option<Observer<'_>>,
) -> Result<NewtonOutcome> {
    let start = Instant::now();
    let mut x = x0;
    let (mut r, mut jac) = system.evaluate(&x, true)?;
    let mut trace = NewtonTrace::default();
    let mut step_norm = 0.0;
    for iteration in 0.. {
        let residual_norm = norm_inf(&r);
        let error_vs_reference = match observer.as_mut() {
            Some(obs) => obs(&x)?,
            None => None,
        };
        trace.rows.push(TraceRow {
            iteration,
            residual_norm,
            step_norm,
            error_vs_reference,
            seconds: start.elapsed().as_secs_f64(),
        });
        if residual_norm <= cfg.tol {
            return Ok(NewtonOutcome { x, trace });
        }
        if iteration >= cfg.max_iter || !residual_norm.is_finite() {
            return Err(Error::NonConvergence {
                iterations: iteration,
                residual: residual_norm,
                trace: Some(Box::new(trace)),
            });
        }
        let j = jac.take().expect("Jacobian requested");
        let minus_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = j.solve(&minus_r)?;
        // A step at rounding level of `x` cannot lower the residual further:
        // the tolerance is below the attainable floor and `x` is converged.
        if norm_inf(&dx) <= 8.0 * f64::EPSILON * norm_inf(&x) {
            return Ok(NewtonOutcome { x, trace });
        }
        let merit = norm2(&r);
        let mut lambda = 1.0;
        let mut halvings = 0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + lambda * d).collect();
            // Only the full step is likely to be accepted outright; damped
            // trials skip the Jacobian and it is rebuilt once on acceptance.
            let full = halvings == 0;
            match system.evaluate(&trial, full) {
                Ok((rt, jt)) if norm2(&rt) <= (1.0 - cfg.armijo * lambda) * merit => {
                    step_norm = x.iter().zip(&trial).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
                    x = trial;
                    if full || norm_inf(&rt) <= cfg.tol {
                        r = rt;
                        jac = jt;
                    } else {
                        (r, jac) = system.evaluate(&x, true)?;
                    }
                    break;
                }
                Ok(_) => {}
                Err(e) if recoverable(&e) => {}
                Err(e) => return Err(e),
            }
            halvings += 1;
            if halvings > cfg.max_halvings {
                return Err(Error::NonConvergence {
                    iterations: iteration,
                    residual: residual_norm,
                    trace: Some(Box::new(trace)),
                });
            }
            lambda *= cfg.backtrack;
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    /// x_k^3 + x_k = c_k, decoupled.
    struct Cubic(Vec<f64>);

    impl NewtonSystem for Cubic {
        type Step = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

        fn evaluate(&mut self, x: &[f64], jacobian: bool) -> Result<(Vec<f64>, Option<Self::Step>)> {
            let r = x.iter().zip(&self.0).map(|(x, c)| x * x * x + x - c).collect();
            let j = jacobian.then(|| {
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    x.len(),
                    x.iter().map(|x| 3.0 * x * x + 1.0),
                ))
                .lu()
            });
            Ok((r, j))
        }
    }

    #[test]
    fn converges_quadratically_on_a_cubic() {
        let mut sys = Cubic(vec![10.0, -2.0, 0.0]);
        let out = solve(&mut sys, vec![0.0; 3], &NewtonConfig::with_tol(1e-13), None).unwrap();
        assert!((out.x[0] - 2.0).abs() < 1e-12);
        assert!((out.x[1] + 1.0).abs() < 1e-12);
        assert_eq!(out.x[2], 0.0);
        let rows = &out.trace.rows;
        let n = rows.len();
        assert!(rows[n - 1].residual_norm < rows[n - 2].residual_norm.powf(1.5));
    }

    #[test]
    fn exact_root_needs_no_iteration() {
        let mut sys = Cubic(vec![0.0]);
        let out = solve(&mut sys, vec![0.0], &NewtonConfig::default(), None).unwrap();
        assert_eq!(out.trace.iterations(), 0);
    }

    #[test]
    fn reports_nonconvergence_with_trace() {
        let mut sys = Cubic(vec![100.0]);
        let cfg = NewtonConfig { max_iter: 2, ..NewtonConfig::default() };
        match solve(&mut sys, vec![0.0], &cfg, None) {
            Err(Error::NonConvergence { iterations, trace: Some(t), .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(t.rows.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trace_csv_without_timings_is_deterministic() {
        let mut sys = Cubic(vec![3.0]);
        let a = solve(&mut sys, vec![0.0], &NewtonConfig::default(), None).unwrap();
        let b = solve(&mut sys, vec![0.0], &NewtonConfig::default(), None).unwrap();
        assert_eq!(a.trace.to_csv(false), b.trace.to_csv(false));
        assert!(a.trace.to_csv(false).starts_with("iteration,residual_norm"));
    }
}
