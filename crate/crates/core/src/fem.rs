//! Mass-lumped P1 "Neumann residuals" of `a u + div(K F(u, ∇u)) = 0`.
//!
//! The residual of vertex `l` is `a w_l u_l + ∫ K ∇φ(u)·∇η_l` for the porous
//! media flux (with the potential `φ(u) = |u|^{p-1} u` interpolated at the
//! vertices) and `a w_l u_l + ∫ K |∇u|^p ∇u·∇η_l` for the p-Laplace flux. `w_l`
//! is the row-sum lumped mass and `K` is sampled at element barycenters.

use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{positions, BandMatrix};
use crate::mesh::{FineMesh, Point, Region, Restriction};
use crate::newton::{self, NewtonConfig, NewtonOutcome, NewtonSystem, NewtonTrace};

/// Nonlinear flux model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flux {
    /// `F = -∇(u^p)`, `p > 1`.
    PorousMedia { p: f64 },
    /// `F = -|∇u|^p ∇u`, `p > 0`.
    PLaplace { p: f64 },
}

/// Diffusion coefficient `K_ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { value: f64 },
    /// `10⁻² + ½(1 + sin(10πx + π/4))`, period 0.2.
    Layered1d,
    /// `10⁻² + ½(1 + sin(10πx + π/2) sin(10πy + π/2))`, period 0.2 in both
    /// directions.
    Checkerboard2d,
    /// `10⁻² + ½(1 + sin(10x + π/2) sin(5y + π/2))`, not periodic on a 5×5
    /// partition.
    Smooth2d,
}

impl Coefficient {
    pub fn eval(&self, x: Point) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Coefficient::Constant { value } => value,
            Coefficient::Layered1d => 1e-2 + 0.5 * (1.0 + (10.0 * PI * x[0] + PI / 4.0).sin()),
            Coefficient::Checkerboard2d => {
                1e-2 + 0.5 * (1.0 + (10.0 * PI * x[0] + PI / 2.0).sin() * (10.0 * PI * x[1] + PI / 2.0).sin())
            }
            Coefficient::Smooth2d => {
                1e-2 + 0.5 * (1.0 + (10.0 * x[0] + PI / 2.0).sin() * (5.0 * x[1] + PI / 2.0).sin())
            }
        }
    }

    /// A lower bound `k_min > 0`.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            Coefficient::Constant { value } => value,
            _ => 1e-2,
        }
    }
}

/// Dirichlet data on `∂Ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryData {
    /// `u(0) = left`, `u(1) = right`, affine in `x` in between.
    Affine1d { left: f64, right: f64 },
    /// `max(u_max (x + y - 1), 0)`.
    Ramp2d { u_max: f64 },
    Constant { value: f64 },
}

impl BoundaryData {
    pub fn eval(&self, x: Point) -> f64 {
        match *self {
            BoundaryData::Affine1d { left, right } => left * (1.0 - x[0]) + right * x[0],
            BoundaryData::Ramp2d { u_max } => (u_max * (x[0] + x[1] - 1.0)).max(0.0),
            BoundaryData::Constant { value } => value,
        }
    }
}

/// Model problem `a u + div(K_ε F(u, ∇u)) = 0`, `u = u_D` on `∂Ω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub dim: usize,
    pub a: f64,
    pub coefficient: Coefficient,
    pub flux: Flux,
    pub boundary: BoundaryData,
}

impl Problem {
    pub fn new(dim: usize, a: f64, coefficient: Coefficient, flux: Flux, boundary: BoundaryData) -> Result<Self> {
        let problem = Problem { dim, a, coefficient, flux, boundary };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::InvalidInput(format!("dimension {} not supported", self.dim)));
        }
        if !(self.a >= 0.0) {
            return Err(Error::InvalidInput(format!("reaction coefficient {} must be >= 0", self.a)));
        }
        match self.flux {
            Flux::PorousMedia { p } if !(p > 1.0) => {
                Err(Error::InvalidInput(format!("porous media exponent {p} must be > 1")))
            }
            Flux::PLaplace { p } if !(p > 0.0) => {
                Err(Error::InvalidInput(format!("p-Laplace exponent {p} must be > 0")))
            }
            _ if !(self.coefficient.lower_bound() > 0.0) => {
                Err(Error::InvalidInput("diffusion coefficient must be bounded below by a positive constant".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `K_ε` at `point`.
pub fn eval_coefficient(problem: &Problem, point: Point) -> f64 {
    problem.coefficient.eval(point)
}

#[inline]
fn powu(x: f64, p: f64) -> f64 {
    if p == p.trunc() && p.abs() < 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

/// Porous media potential `|u|^{p-1} u` and its derivative `p |u|^{p-1}`.
#[inline]
pub fn potential(u: f64, p: f64) -> (f64, f64) {
    let m = powu(u.abs(), p - 1.0);
    (m * u, p * m)
}

/// Element data of a set of P1 elements in a local dof numbering.
#[derive(Debug, Clone)]
pub struct ElementSet {
    n_dofs: usize,
    nv: usize,
    dim: usize,
    conn: Vec<[usize; 3]>,
    grads: Vec<[[f64; 2]; 3]>,
    measure: Vec<f64>,
    kappa: Vec<f64>,
    lumped: Vec<f64>,
    a: f64,
    flux: Flux,
}

impl ElementSet {
    /// Elements `elements` of `mesh`, renumbered through `dofs` (ascending
    /// global vertex indices).
    pub fn new(problem: &Problem, mesh: &FineMesh, elements: &[usize], dofs: &Restriction) -> Self {
        let dim = mesh.dim();
        let nv = dim + 1;
        let pos = dofs.inverse_map();
        let mut set = ElementSet {
            n_dofs: dofs.target_size(),
            nv,
            dim,
            conn: Vec::with_capacity(elements.len()),
            grads: Vec::with_capacity(elements.len()),
            measure: Vec::with_capacity(elements.len()),
            kappa: Vec::with_capacity(elements.len()),
            lumped: vec![0.0; dofs.target_size()],
            a: problem.a,
            flux: problem.flux,
        };
        for &e in elements {
            let verts = mesh.element(e);
            let mut local = [usize::MAX; 3];
            for (k, &v) in verts.iter().enumerate() {
                local[k] = pos[v].expect("element vertex outside the dof set");
            }
            let pts: Vec<Point> = verts.iter().map(|&v| mesh.vertex(v)).collect();
            let (measure, grads, center) = if dim == 1 {
                let h = pts[1][0] - pts[0][0];
                (h, [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0; 2]], [0.5 * (pts[0][0] + pts[1][0]), 0.0])
            } else {
                let (a, b, c) = (pts[0], pts[1], pts[2]);
                let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                let grads = [
                    [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
                    [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
                    [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
                ];
                let center = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
                (0.5 * det, grads, center)
            };
            for &l in &local[..nv] {
                set.lumped[l] += measure / nv as f64;
            }
            set.conn.push(local);
            set.grads.push(grads);
            set.measure.push(measure);
            set.kappa.push(problem.coefficient.eval(center));
        }
        set
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Row-sum lumped mass weights.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    #[inline]
    fn dot(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        if self.dim == 1 {
            x[0] * y[0]
        } else {
            x[0] * y[0] + x[1] * y[1]
        }
    }

    pub fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n_dofs {
            return Err(Error::InvalidInput(format!("expected {} dofs, got {}", self.n_dofs, u.len())));
        }
        if !u.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("residual input"));
        }
        let mut r: Vec<f64> = u.iter().zip(&self.lumped).map(|(u, w)| self.a * w * u).collect();
        let nv = self.nv;
        match self.flux {
            Flux::PorousMedia { p } => {
                let w: Vec<f64> = u.iter().map(|&x| potential(x, p).0).collect();
                for e in 0..self.conn.len() {
                    let (c, g) = (&self.conn[e], &self.grads[e]);
                    let mut grad = [0.0; 2];
                    for k in 0..nv {
                        grad[0] += w[c[k]] * g[k][0];
                        grad[1] += w[c[k]] * g[k][1];
                    }
                    let scale = self.kappa[e] * self.measure[e];
                    for k in 0..nv {
                        r[c[k]] += scale * self.dot(grad, g[k]);
                    }
                }
            }
            Flux::PLaplace { p } => {
                for e in 0..self.conn.len() {
                    let (c, g) = (&self.conn[e], &self.grads[e]);
                    let mut grad = [0.0; 2];
                    for k in 0..nv {
                        grad[0] += u[c[k]] * g[k][0];
                        grad[1] += u[c[k]] * g[k][1];
                    }
                    let s = self.dot(grad, grad).sqrt();
                    let scale = self.kappa[e] * self.measure[e] * powu(s, p);
                    for k in 0..nv {
                        r[c[k]] += scale * self.dot(grad, g[k]);
                    }
                }
            }
        }
        if r.iter().all(|x| x.is_finite()) {
            Ok(r)
        } else {
            Err(Error::NonFinite("residual"))
        }
    }

    /// Calls `f(row, col, value)` for every element contribution to the
    /// Jacobian at `u` (duplicates must be summed).
    pub fn for_each_jacobian_entry(&self, u: &[f64], mut f: impl FnMut(usize, usize, f64)) -> Result<()> {
        if u.len() != self.n_dofs {
            return Err(Error::InvalidInput(format!("expected {} dofs, got {}", self.n_dofs, u.len())));
        }
        if !u.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("Jacobian input"));
        }
        for (l, (&w, _)) in self.lumped.iter().zip(u).enumerate() {
            f(l, l, self.a * w);
        }
        let nv = self.nv;
        match self.flux {
            Flux::PorousMedia { p } => {
                for e in 0..self.conn.len() {
                    let (c, g) = (&self.conn[e], &self.grads[e]);
                    let scale = self.kappa[e] * self.measure[e];
                    for j in 0..nv {
                        let dw = potential(u[c[j]], p).1;
                        if dw == 0.0 {
                            continue;
                        }
                        for l in 0..nv {
                            f(c[l], c[j], scale * self.dot(g[l], g[j]) * dw);
                        }
                    }
                }
            }
            Flux::PLaplace { p } => {
                for e in 0..self.conn.len() {
                    let (c, g) = (&self.conn[e], &self.grads[e]);
                    let mut grad = [0.0; 2];
                    for k in 0..nv {
                        grad[0] += u[c[k]] * g[k][0];
                        grad[1] += u[c[k]] * g[k][1];
                    }
                    let s2 = self.dot(grad, grad);
                    if s2 == 0.0 {
                        continue;
                    }
                    let s = s2.sqrt();
                    let iso = powu(s, p);
                    let aniso = p * powu(s, p - 2.0);
                    let scale = self.kappa[e] * self.measure[e];
                    for l in 0..nv {
                        let gl = self.dot(grad, g[l]);
                        for j in 0..nv {
                            let v = iso * self.dot(g[l], g[j]) + aniso * gl * self.dot(grad, g[j]);
                            f(c[l], c[j], scale * v);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn jacobian(&self, u: &[f64]) -> Result<CsrMatrix<f64>> {
        let mut coo = CooMatrix::new(self.n_dofs, self.n_dofs);
        self.for_each_jacobian_entry(u, |r, c, v| coo.push(r, c, v))?;
        Ok(CsrMatrix::from(&coo))
    }

    /// Bandwidths of the Jacobian block over `rows` (in that order).
    fn block_bandwidths(&self, pos: &[Option<usize>]) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for c in &self.conn {
            for &a in &c[..self.nv] {
                for &b in &c[..self.nv] {
                    if let (Some(r), Some(s)) = (pos[a], pos[b]) {
                        if s < r {
                            kl = kl.max(r - s);
                        } else {
                            ku = ku.max(s - r);
                        }
                    }
                }
            }
        }
        (kl, ku)
    }
}

/// Dofs and elements of one closed subdomain `Ω̄_i`, local numbering following
/// ascending global index.
#[derive(Debug, Clone)]
pub struct SubdomainSystem {
    index: usize,
    closure: Restriction,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    interior_pos: Vec<Option<usize>>,
    boundary_pos: Vec<Option<usize>>,
    bands: (usize, usize),
    elements: ElementSet,
}

impl SubdomainSystem {
    pub fn new(problem: &Problem, mesh: &FineMesh, i: usize) -> Result<Self> {
        let closure = mesh.restriction(Region::SubClosure(i))?;
        let interior_global = mesh.restriction(Region::SubInterior(i))?;
        let boundary_global = mesh.restriction(Region::SubBoundary(i))?;
        let interior: Vec<usize> =
            interior_global.relative_to(&closure).map().iter().map(|k| k.expect("interior in closure")).collect();
        let boundary: Vec<usize> =
            boundary_global.relative_to(&closure).map().iter().map(|k| k.expect("boundary in closure")).collect();
        let elements = ElementSet::new(problem, mesh, &mesh.subdomain_elements(i), &closure);
        let interior_pos = positions(&interior, closure.target_size());
        let boundary_pos = positions(&boundary, closure.target_size());
        let bands = elements.block_bandwidths(&interior_pos);
        Ok(SubdomainSystem { index: i, closure, interior, boundary, interior_pos, boundary_pos, bands, elements })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// `R_{Ω̄_i}`.
    pub fn closure(&self) -> &Restriction {
        &self.closure
    }

    /// Positions of `Ω_i` dofs inside `Ω̄_i`.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Positions of `∂Ω_i` dofs inside `Ω̄_i`.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn interior_pos(&self) -> &[Option<usize>] {
        &self.interior_pos
    }

    pub fn boundary_pos(&self) -> &[Option<usize>] {
        &self.boundary_pos
    }

    pub fn elements(&self) -> &ElementSet {
        &self.elements
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    /// `u_i = R^{Ω̄_i}_{Ω_i} u_I + R^{Ω̄_i}_{∂Ω_i} u_∂`.
    pub fn combine(&self, interior: &[f64], boundary: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.closure.target_size()];
        for (&k, &v) in self.interior.iter().zip(interior) {
            u[k] = v;
        }
        for (&k, &v) in self.boundary.iter().zip(boundary) {
            u[k] = v;
        }
        u
    }

    /// Interior Jacobian block `∂_{Ω_i} F_{Ω_i}` in band form.
    pub fn interior_band(&self, u: &[f64]) -> Result<BandMatrix> {
        let mut band = BandMatrix::zeros(self.interior.len(), self.bands.0, self.bands.1);
        self.elements.for_each_jacobian_entry(u, |r, c, v| {
            if let (Some(r), Some(c)) = (self.interior_pos[r], self.interior_pos[c]) {
                *band.entry_mut(r, c) += v;
            }
        })?;
        Ok(band)
    }
}

/// `F_i(u_i)` for subdomain `i`.
pub fn local_residual(problem: &Problem, mesh: &FineMesh, i: usize, u_i: &[f64]) -> Result<Vec<f64>> {
    SubdomainSystem::new(problem, mesh, i)?.elements.residual(u_i)
}

/// Sparse Jacobian of [`local_residual`].
pub fn local_jacobian(problem: &Problem, mesh: &FineMesh, i: usize, u_i: &[f64]) -> Result<CsrMatrix<f64>> {
    SubdomainSystem::new(problem, mesh, i)?.elements.jacobian(u_i)
}

/// `F(u) = Σ_i R_{Ω̄_i}ᵀ F_i(R_{Ω̄_i} u)`.
pub fn global_residual(problem: &Problem, mesh: &FineMesh, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != mesh.n_vertices() {
        return Err(Error::InvalidInput(format!("expected {} dofs, got {}", mesh.n_vertices(), u.len())));
    }
    let mut out = vec![0.0; u.len()];
    for i in 0..mesh.n_subdomains() {
        let sub = SubdomainSystem::new(problem, mesh, i)?;
        let local = sub.elements.residual(&sub.closure.restrict(u))?;
        sub.closure.extend_add(&local, &mut out);
    }
    Ok(out)
}

/// Whole-mesh element set, assembled without reference to the partition.
pub fn monolithic_elements(problem: &Problem, mesh: &FineMesh) -> ElementSet {
    let all = Restriction::new(mesh.n_vertices(), (0..mesh.n_vertices()).collect()).expect("identity");
    let elements: Vec<usize> = (0..mesh.n_elements()).collect();
    ElementSet::new(problem, mesh, &elements, &all)
}

/// Nodal interpolation of the Dirichlet data on `∂Ω`, zero elsewhere.
pub fn dirichlet_vector(problem: &Problem, mesh: &FineMesh) -> Vec<f64> {
    (0..mesh.n_vertices())
        .map(|k| match mesh.vertex_kind(k) {
            crate::mesh::VertexKind::Boundary => problem.boundary.eval(mesh.vertex(k)),
            _ => 0.0,
        })
        .collect()
}

struct MonolithicSystem<'a> {
    elements: &'a ElementSet,
    free: Vec<usize>,
    free_pos: Vec<Option<usize>>,
    bands: (usize, usize),
    base: Vec<f64>,
}

impl MonolithicSystem<'_> {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut u = self.base.clone();
        for (&k, &v) in self.free.iter().zip(x) {
            u[k] = v;
        }
        u
    }
}

impl NewtonSystem for MonolithicSystem<'_> {
    type Step = crate::linalg::BandLu;

    fn evaluate(&mut self, x: &[f64], jacobian: bool) -> Result<(Vec<f64>, Option<Self::Step>)> {
        let u = self.full(x);
        let r = self.elements.residual(&u)?;
        let r: Vec<f64> = self.free.iter().map(|&k| r[k]).collect();
        let step = if jacobian {
            let mut band = BandMatrix::zeros(self.free.len(), self.bands.0, self.bands.1);
            self.elements.for_each_jacobian_entry(&u, |r, c, v| {
                if let (Some(r), Some(c)) = (self.free_pos[r], self.free_pos[c]) {
                    *band.entry_mut(r, c) += v;
                }
            })?;
            Some(band.factorize()?)
        } else {
            None
        };
        Ok((r, step))
    }
}

/// Solves the full (non-substructured) FEM system `R_Ω F(u) = 0` with
/// Dirichlet data on `∂Ω`, starting from zero in the interior.
pub fn solve_monolithic(problem: &Problem, mesh: &FineMesh, cfg: &NewtonConfig) -> Result<NewtonOutcome> {
    let elements = monolithic_elements(problem, mesh);
    let target = dirichlet_vector(problem, mesh);
    let free = mesh.restriction(Region::Domain)?.indices().to_vec();
    let free_pos = positions(&free, mesh.n_vertices());
    let bands = elements.block_bandwidths(&free_pos);
    let mut system = MonolithicSystem { elements: &elements, free: free.clone(), free_pos, bands, base: target.clone() };
    // Continuation in the Dirichlet data as a fallback when a full step stalls.
    // A constant guess at the mean boundary value keeps the first Jacobians
    // away from the degenerate state u = 0.
    let outer = mesh.restriction(Region::DomainBoundary)?;
    let mean = outer.indices().iter().map(|&k| target[k]).sum::<f64>() / outer.indices().len().max(1) as f64;
    let mut x = vec![mean; free.len()];
    let mut trace = NewtonTrace::default();
    let (mut reached, mut step) = (0.0_f64, 1.0_f64);
    while reached < 1.0 {
        let s = (reached + step).min(1.0);
        system.base = target.iter().map(|v| s * v).collect();
        match newton::solve(&mut system, x.clone(), cfg, None) {
            Ok(out) => {
                let offset = trace.rows.last().map_or(0, |r| r.iteration);
                let skip = usize::from(!trace.rows.is_empty());
                trace.rows.extend(out.trace.rows.into_iter().skip(skip).map(|mut r| {
                    r.iteration += offset;
                    r
                }));
                x = out.x;
                reached = s;
                step = (2.0 * step).min(1.0);
            }
            Err(e) if matches!(e, Error::NonConvergence { .. }) && step > 1.0 / 1024.0 => step *= 0.5,
            Err(e) => return Err(e),
        }
    }
    let x = system.full(&x);
    Ok(NewtonOutcome { x, trace })
}
