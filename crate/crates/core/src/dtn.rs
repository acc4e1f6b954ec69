//! Local Dirichlet solves and discrete Dirichlet-to-Neumann maps.
//!
//! `DtN_{h,i}(g) = F_{∂Ω_i}(G_{Ω_i}(g), g)` where `G_{Ω_i}` solves the interior
//! equations `F_{Ω_i}(u_I, g) = 0`. By the implicit function theorem its
//! derivative is the Schur complement
//! `A_∂∂ - A_∂I A_II⁻¹ A_I∂` of the local Jacobian at the converged state.
//! The coarse map restricts both through the local hat basis `Φ_{Hi}`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem::{Problem, SubdomainSystem};
use crate::linalg::{dense_block, BandLu};
use crate::mesh::{CoarseBasis, FineMesh};
use crate::newton::{self, NewtonConfig, NewtonSystem};

/// Settings of the local nonlinear solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSolverConfig {
    pub newton: NewtonConfig,
}

impl Default for LocalSolverConfig {
    fn default() -> Self {
        LocalSolverConfig { newton: NewtonConfig { tol: 1e-10, max_iter: 100, ..NewtonConfig::default() } }
    }
}

impl LocalSolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        let mut cfg = Self::default();
        cfg.newton.tol = tol;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.newton.tol > 0.0) || self.newton.max_iter == 0 {
            return Err(Error::InvalidInput("local solver needs tol > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

/// Output of a DtN evaluation.
#[derive(Debug, Clone)]
pub struct DtnResult {
    pub flux: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
    /// Converged `u_{Ω_i}`, reusable as a warm start.
    pub interior_state: Vec<f64>,
    pub newton_iterations: usize,
}

struct LocalDirichlet<'a> {
    sub: &'a SubdomainSystem,
    g: &'a [f64],
}

impl NewtonSystem for LocalDirichlet<'_> {
    type Step = BandLu;

    fn evaluate(&mut self, x: &[f64], jacobian: bool) -> Result<(Vec<f64>, Option<BandLu>)> {
        let u = self.sub.combine(x, self.g);
        let r = self.sub.elements().residual(&u)?;
        let r_int = self.sub.interior().iter().map(|&k| r[k]).collect();
        let step = if jacobian { Some(self.sub.interior_band(&u)?.factorize()?) } else { None };
        Ok((r_int, step))
    }
}

/// Precomputed local operator of one subdomain.
#[derive(Debug, Clone)]
pub struct LocalDtn {
    sub: SubdomainSystem,
}

impl LocalDtn {
    pub fn new(problem: &Problem, mesh: &FineMesh, i: usize) -> Result<Self> {
        Ok(LocalDtn { sub: SubdomainSystem::new(problem, mesh, i)? })
    }

    pub fn system(&self) -> &SubdomainSystem {
        &self.sub
    }

    fn check_boundary(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.sub.n_boundary() {
            return Err(Error::InvalidInput(format!(
                "expected {} boundary values, got {}",
                self.sub.n_boundary(),
                g.len()
            )));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Dirichlet data"));
        }
        Ok(())
    }

    /// `G_{Ω_i}(g)` and the Newton iteration count.
    pub fn solve_local(&self, g: &[f64], cfg: &LocalSolverConfig, initial: Option<&[f64]>) -> Result<(Vec<f64>, usize)> {
        self.check_boundary(g)?;
        let x0 = match initial {
            Some(x) if x.len() == self.sub.n_interior() => x.to_vec(),
            _ => vec![0.0; self.sub.n_interior()],
        };
        let mut system = LocalDirichlet { sub: &self.sub, g };
        let out = newton::solve(&mut system, x0, &cfg.newton, None)?;
        Ok((out.x, out.trace.iterations()))
    }

    /// `DtN_{h,i}(g)` and optionally its Schur-complement Jacobian.
    pub fn dtn_fine(
        &self,
        g: &[f64],
        cfg: &LocalSolverConfig,
        want_jacobian: bool,
        initial: Option<&[f64]>,
    ) -> Result<DtnResult> {
        let (interior, iterations) = self.solve_local(g, cfg, initial)?;
        let u = self.sub.combine(&interior, g);
        let r = self.sub.elements().residual(&u)?;
        let flux = self.sub.boundary().iter().map(|&k| r[k]).collect();
        let jacobian = if want_jacobian { Some(self.schur(&u)?) } else { None };
        Ok(DtnResult { flux, jacobian, interior_state: interior, newton_iterations: iterations })
    }

    fn schur(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        let sub = &self.sub;
        let jac = sub.elements().jacobian(u)?;
        let nb = sub.n_boundary();
        let a_bb = dense_block(&jac, sub.boundary(), sub.boundary_pos(), nb);
        if sub.n_interior() == 0 {
            return Ok(a_bb);
        }
        let ni = sub.n_interior();
        let a_ib = dense_block(&jac, sub.interior(), sub.boundary_pos(), nb);
        let a_bi = dense_block(&jac, sub.boundary(), sub.interior_pos(), ni);
        let lu = sub.interior_band(u)?.factorize()?;
        let mut x = a_ib;
        for c in 0..nb {
            let mut col = x.column_mut(c);
            lu.solve_in_place(col.as_mut_slice());
        }
        Ok(a_bb - a_bi * x)
    }

    /// `DtN_{H,i}(v) = Φ_{Hi}ᵀ DtN_{h,i}(Φ_{Hi} v)`, Jacobian `Φᵀ DtN' Φ`.
    pub fn dtn_coarse(
        &self,
        phi: &DMatrix<f64>,
        v: &[f64],
        cfg: &LocalSolverConfig,
        want_jacobian: bool,
        initial: Option<&[f64]>,
    ) -> Result<DtnResult> {
        if v.len() != phi.ncols() || phi.nrows() != self.sub.n_boundary() {
            return Err(Error::InvalidInput(format!(
                "coarse vector of length {} does not match the local basis {}x{}",
                v.len(),
                phi.nrows(),
                phi.ncols()
            )));
        }
        let g = phi * nalgebra::DVector::from_column_slice(v);
        let fine = self.dtn_fine(g.as_slice(), cfg, want_jacobian, initial)?;
        let flux = phi.tr_mul(&nalgebra::DVector::from_column_slice(&fine.flux));
        let jacobian = fine.jacobian.map(|j| phi.tr_mul(&(j * phi)));
        Ok(DtnResult {
            flux: flux.as_slice().to_vec(),
            jacobian,
            interior_state: fine.interior_state,
            newton_iterations: fine.newton_iterations,
        })
    }
}

/// Solves the local Dirichlet problem on subdomain `i` from a zero guess.
pub fn solve_local(
    problem: &Problem,
    mesh: &FineMesh,
    i: usize,
    g: &[f64],
    cfg: &LocalSolverConfig,
) -> Result<Vec<f64>> {
    Ok(LocalDtn::new(problem, mesh, i)?.solve_local(g, cfg, None)?.0)
}

pub fn dtn_fine(
    problem: &Problem,
    mesh: &FineMesh,
    i: usize,
    g: &[f64],
    cfg: &LocalSolverConfig,
    want_jacobian: bool,
) -> Result<DtnResult> {
    LocalDtn::new(problem, mesh, i)?.dtn_fine(g, cfg, want_jacobian, None)
}

pub fn dtn_coarse(
    problem: &Problem,
    mesh: &FineMesh,
    basis: &CoarseBasis,
    i: usize,
    v: &[f64],
    cfg: &LocalSolverConfig,
    want_jacobian: bool,
) -> Result<DtnResult> {
    LocalDtn::new(problem, mesh, i)?.dtn_coarse(basis.local(i), v, cfg, want_jacobian, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoundaryData, Coefficient, Flux};
    use crate::mesh::{build_coarse_basis, build_fine_mesh, build_partition};

    fn setup_1d(a: f64, coefficient: Coefficient) -> (Problem, FineMesh) {
        let part = build_partition(1, 5).unwrap();
        let mesh = build_fine_mesh(&part, 40).unwrap();
        let prob = Problem::new(1, a, coefficient, Flux::PorousMedia { p: 4.0 }, BoundaryData::Affine1d {
            left: 4.0,
            right: 0.0,
        })
        .unwrap();
        (prob, mesh)
    }

    #[test]
    fn zero_data_gives_zero_state_immediately() {
        let (prob, mesh) = setup_1d(20.0, Coefficient::Layered1d);
        let local = LocalDtn::new(&prob, &mesh, 2).unwrap();
        let (u, iterations) = local.solve_local(&[0.0, 0.0], &LocalSolverConfig::default(), None).unwrap();
        assert_eq!(iterations, 0);
        assert!(u.iter().all(|&x| x == 0.0));
        let r = local.dtn_fine(&[0.0, 0.0], &LocalSolverConfig::default(), true, None).unwrap();
        assert_eq!(r.flux, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_wrong_boundary_size_and_nan() {
        let (prob, mesh) = setup_1d(20.0, Coefficient::Layered1d);
        let local = LocalDtn::new(&prob, &mesh, 0).unwrap();
        assert!(local.solve_local(&[1.0], &LocalSolverConfig::default(), None).is_err());
        assert!(matches!(
            local.solve_local(&[1.0, f64::NAN], &LocalSolverConfig::default(), None),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn max_iter_exhaustion_reports_nonconvergence() {
        let (prob, mesh) = setup_1d(20.0, Coefficient::Layered1d);
        let mut cfg = LocalSolverConfig::with_tol(1e-14);
        cfg.newton.max_iter = 1;
        let err = dtn_fine(&prob, &mesh, 0, &[4.0, 1.0], &cfg, false).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn coarse_equals_fine_in_1d() {
        let (prob, mesh) = setup_1d(20.0, Coefficient::Layered1d);
        let part = build_partition(1, 5).unwrap();
        let basis = build_coarse_basis(&part, &mesh).unwrap();
        let cfg = LocalSolverConfig::default();
        let fine = dtn_fine(&prob, &mesh, 3, &[1.5, 3.0], &cfg, true).unwrap();
        let coarse = dtn_coarse(&prob, &mesh, &basis, 3, &[1.5, 3.0], &cfg, true).unwrap();
        assert_eq!(fine.flux, coarse.flux);
        assert_eq!(fine.jacobian, coarse.jacobian);
    }
}
