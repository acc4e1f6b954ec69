//! Skeleton systems `F_Γ(g) = 0` and `F_H(g_H) = 0` assembled from local DtN
//! maps, their Newton solution and the reconstruction of full fields.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dtn::{LocalDtn, LocalSolverConfig};
use crate::error::{Error, Result};
use crate::fem::Problem;
use crate::mesh::{CoarseBasis, CoarsePartition, FineMesh, Region, VertexKind};
use crate::newton::{self, NewtonConfig, NewtonSystem, NewtonTrace};
use crate::surrogate::SurrogateRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Unknowns are the fine skeleton dofs.
    Fine,
    /// Unknowns are the coarse nodes.
    Coarse,
}

#[derive(Debug, Clone)]
pub enum Backend {
    Exact,
    /// Learned coarse maps, continued affinely outside their training box
    /// (see [`crate::surrogate::SurrogateModel::evaluate_extended`]).
    Surrogate(SurrogateRegistry),
}

/// Splits skeleton vectors into unknown and fixed (Dirichlet) entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    size: usize,
    unknowns: Vec<usize>,
    fixed: Vec<usize>,
    fixed_values: Vec<f64>,
}

impl Embedding {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn unknowns(&self) -> &[usize] {
        &self.unknowns
    }

    pub fn fixed(&self) -> &[usize] {
        &self.fixed
    }

    pub fn fixed_values(&self) -> &[f64] {
        &self.fixed_values
    }

    /// Skeleton vector with unknowns `x` and the fixed boundary values.
    pub fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.size];
        for (&k, &v) in self.fixed.iter().zip(&self.fixed_values) {
            g[k] = v;
        }
        for (&k, &v) in self.unknowns.iter().zip(x) {
            g[k] = v;
        }
        g
    }

    pub fn unknown_part(&self, g: &[f64]) -> Vec<f64> {
        self.unknowns.iter().map(|&k| g[k]).collect()
    }
}

/// A substructured problem on one level with one DtN backend.
#[derive(Debug, Clone)]
pub struct SkeletonSystem<'a> {
    mesh: &'a FineMesh,
    basis: &'a CoarseBasis,
    level: Level,
    backend: Backend,
    locals: Vec<LocalDtn>,
    /// Local boundary dof -> position in the level's skeleton vector.
    maps: Vec<Vec<usize>>,
    /// Local fine boundary dof -> position in the fine skeleton vector.
    fine_maps: Vec<Vec<usize>>,
    embedding: Embedding,
    local_cfg: LocalSolverConfig,
    warm_start: bool,
    warm: Vec<Option<Vec<f64>>>,
}

impl<'a> SkeletonSystem<'a> {
    pub fn new(
        problem: &Problem,
        partition: &CoarsePartition,
        mesh: &'a FineMesh,
        basis: &'a CoarseBasis,
        level: Level,
        backend: Backend,
        local_cfg: LocalSolverConfig,
    ) -> Result<Self> {
        local_cfg.validate()?;
        let n_sub = partition.n_subdomains();
        if mesh.n_subdomains() != n_sub || basis.phi().ncols() != partition.coarse_nodes().len() {
            return Err(Error::InvalidInput("mesh, basis and partition do not match".into()));
        }
        let skeleton = basis.skeleton();
        let mut fine_maps = Vec::with_capacity(n_sub);
        let mut locals = Vec::with_capacity(n_sub);
        for i in 0..n_sub {
            let map = mesh.restriction(Region::SubBoundary(i))?.relative_to(skeleton);
            fine_maps.push(map.map().iter().map(|k| k.expect("subdomain boundary on the skeleton")).collect());
            locals.push(LocalDtn::new(problem, mesh, i)?);
        }
        let (maps, embedding) = match level {
            Level::Fine => {
                let (mut unknowns, mut fixed, mut values) = (vec![], vec![], vec![]);
                for (pos, &v) in skeleton.indices().iter().enumerate() {
                    if mesh.vertex_kind(v) == VertexKind::Boundary {
                        fixed.push(pos);
                        values.push(problem.boundary.eval(mesh.vertex(v)));
                    } else {
                        unknowns.push(pos);
                    }
                }
                let embedding = Embedding { size: skeleton.target_size(), unknowns, fixed, fixed_values: values };
                (fine_maps.clone(), embedding)
            }
            Level::Coarse => {
                let (mut unknowns, mut fixed, mut values) = (vec![], vec![], vec![]);
                for (k, node) in partition.coarse_nodes().iter().enumerate() {
                    if node.on_boundary {
                        fixed.push(k);
                        values.push(problem.boundary.eval(node.position));
                    } else {
                        unknowns.push(k);
                    }
                }
                let maps = (0..n_sub).map(|i| partition.local_coarse_nodes(i)).collect();
                let embedding =
                    Embedding { size: partition.coarse_nodes().len(), unknowns, fixed, fixed_values: values };
                (maps, embedding)
            }
        };
        if matches!(backend, Backend::Surrogate(_)) && level == Level::Fine {
            return Err(Error::InvalidInput("surrogate DtN maps act on the coarse level".into()));
        }
        check_surrogate_inputs(&backend, &maps)?;
        Ok(SkeletonSystem {
            mesh,
            basis,
            level,
            backend,
            locals,
            maps,
            fine_maps,
            embedding,
            local_cfg,
            warm_start: true,
            warm: vec![None; n_sub],
        })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn set_backend(&mut self, backend: Backend) -> Result<()> {
        if matches!(backend, Backend::Surrogate(_)) && self.level == Level::Fine {
            return Err(Error::InvalidInput("surrogate DtN maps act on the coarse level".into()));
        }
        check_surrogate_inputs(&backend, &self.maps)?;
        self.backend = backend;
        Ok(())
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn local_config(&self) -> &LocalSolverConfig {
        &self.local_cfg
    }

    /// Reuse the last interior states as initial guesses of local solves.
    /// Results then depend on the evaluation history at the level of the
    /// local tolerance.
    pub fn set_warm_start(&mut self, on: bool) {
        self.warm_start = on;
        self.clear_warm_states();
    }

    /// Forgets the stored interior states.
    pub fn clear_warm_states(&mut self) {
        self.warm.iter_mut().for_each(|w| *w = None);
    }

    /// Sum of extended local DtN contributions on the whole skeleton.
    pub fn assemble(&mut self, g: &[f64], want_jacobian: bool) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
        let n = self.embedding.size;
        if g.len() != n {
            return Err(Error::InvalidInput(format!("skeleton vector of length {} expected, got {}", n, g.len())));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("skeleton vector"));
        }
        let mut r = vec![0.0; n];
        let mut jac = want_jacobian.then(|| DMatrix::zeros(n, n));
        for i in 0..self.maps.len() {
            let map = &self.maps[i];
            let v: Vec<f64> = map.iter().map(|&k| g[k]).collect();
            let (flux, local_jac) = match &self.backend {
                Backend::Exact => {
                    let initial = if self.warm_start { self.warm[i].as_deref() } else { None };
                    let out = match self.level {
                        Level::Fine => self.locals[i].dtn_fine(&v, &self.local_cfg, want_jacobian, initial),
                        Level::Coarse => {
                            self.locals[i].dtn_coarse(self.basis.local(i), &v, &self.local_cfg, want_jacobian, initial)
                        }
                    }
                    .map_err(|e| e.at_stage("local DtN"))?;
                    if self.warm_start {
                        self.warm[i] = Some(out.interior_state);
                    }
                    (out.flux, out.jacobian)
                }
                Backend::Surrogate(registry) => {
                    let (flux, j) = registry.model_for(i)?.evaluate_extended(&v)?;
                    (flux, want_jacobian.then_some(j))
                }
            };
            for (a, &ka) in map.iter().enumerate() {
                r[ka] += flux[a];
            }
            if let (Some(jac), Some(lj)) = (jac.as_mut(), local_jac) {
                for (a, &ka) in map.iter().enumerate() {
                    for (b, &kb) in map.iter().enumerate() {
                        jac[(ka, kb)] += lj[(a, b)];
                    }
                }
            }
        }
        Ok((r, jac))
    }

    /// `F_Γ(g)` or `F_H(g)` on the unknown set; `g` includes the fixed values.
    pub fn residual_skeleton(&mut self, g: &[f64]) -> Result<Vec<f64>> {
        let (r, _) = self.assemble(g, false)?;
        Ok(self.embedding.unknown_part(&r))
    }

    /// Residual and Jacobian on the unknown set.
    pub fn residual_and_jacobian(&mut self, g: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (r, jac) = self.assemble(g, true)?;
        let jac = jac.expect("Jacobian requested");
        let u = &self.embedding.unknowns;
        let j = DMatrix::from_fn(u.len(), u.len(), |a, b| jac[(u[a], u[b])]);
        Ok((self.embedding.unknown_part(&r), j))
    }

    /// Newton on the skeleton unknowns from `initial` (zero if absent).
    /// The observer sees full skeleton vectors.
    pub fn solve(
        &mut self,
        initial: Option<&[f64]>,
        cfg: &NewtonConfig,
        observer: Option<newton::Observer<'_>>,
    ) -> Result<(Vec<f64>, NewtonTrace)> {
        let embedding = self.embedding.clone();
        let x0 = match initial {
            Some(x) if x.len() == embedding.unknowns.len() => x.to_vec(),
            Some(x) => {
                return Err(Error::InvalidInput(format!(
                    "initial guess of length {} for {} unknowns",
                    x.len(),
                    embedding.unknowns.len()
                )))
            }
            None => vec![0.0; embedding.unknowns.len()],
        };
        let out = match observer {
            Some(obs) => {
                let mut wrapped = |x: &[f64]| obs(&embedding.full(x));
                newton::solve(self, x0, cfg, Some(&mut wrapped))?
            }
            None => newton::solve(self, x0, cfg, None)?,
        };
        Ok((embedding.full(&out.x), out.trace))
    }

    /// Fine skeleton trace of a level vector.
    pub fn fine_trace(&self, g: &[f64]) -> Vec<f64> {
        match self.level {
            Level::Fine => g.to_vec(),
            Level::Coarse => self.basis.prolong(g),
        }
    }

    /// Full nodal field: the (prolonged) trace on `Γ` and local Dirichlet
    /// solutions inside the subdomains.
    pub fn reconstruct(&mut self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.embedding.size {
            return Err(Error::InvalidInput("skeleton vector has the wrong length".into()));
        }
        let trace = self.fine_trace(g);
        let mut u = self.basis.skeleton().extend(&trace);
        for i in 0..self.locals.len() {
            let gi: Vec<f64> = self.fine_maps[i].iter().map(|&k| trace[k]).collect();
            let initial = if self.warm_start { self.warm[i].as_deref() } else { None };
            let (interior, _) =
                self.locals[i].solve_local(&gi, &self.local_cfg, initial).map_err(|e| e.at_stage("reconstruction"))?;
            let sys = self.locals[i].system();
            let closure = sys.closure().indices();
            for (&pos, &v) in sys.interior().iter().zip(&interior) {
                u[closure[pos]] = v;
            }
        }
        debug_assert_eq!(u.len(), self.mesh.n_vertices());
        Ok(u)
    }
}

impl NewtonSystem for SkeletonSystem<'_> {
    type Step = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

    fn evaluate(&mut self, x: &[f64], jacobian: bool) -> Result<(Vec<f64>, Option<Self::Step>)> {
        let g = self.embedding.full(x);
        if jacobian {
            let (r, j) = self.residual_and_jacobian(&g)?;
            Ok((r, Some(j.lu())))
        } else {
            Ok((self.residual_skeleton(&g)?, None))
        }
    }
}

/// Every surrogate must take as many inputs as its subdomain has coarse nodes.
fn check_surrogate_inputs(backend: &Backend, maps: &[Vec<usize>]) -> Result<()> {
    let Backend::Surrogate(registry) = backend else {
        return Ok(());
    };
    for (i, map) in maps.iter().enumerate() {
        let d = registry.model_for(i)?.input_dim();
        if d != map.len() {
            return Err(Error::InvalidInput(format!("surrogate for subdomain {i} takes {d} inputs, expected {}", map.len())));
        }
    }
    Ok(())
}

/// Solves on `level` from zero and reconstructs the field.
#[allow(clippy::too_many_arguments)]
pub fn solve_substructured(
    problem: &Problem,
    partition: &CoarsePartition,
    mesh: &FineMesh,
    basis: &CoarseBasis,
    level: Level,
    backend: Backend,
    local_cfg: LocalSolverConfig,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, Vec<f64>, NewtonTrace)> {
    let mut system = SkeletonSystem::new(problem, partition, mesh, basis, level, backend, local_cfg)?;
    let (g, trace) = system.solve(None, cfg, None)?;
    let u = system.reconstruct(&g)?;
    Ok((g, u, trace))
}

/// Relative lumped-`L²` difference `‖a - b‖ / ‖b‖`.
pub fn error_l2(a: &[f64], b: &[f64], mesh: &FineMesh) -> Result<f64> {
    let n = mesh.n_vertices();
    if a.len() != n || b.len() != n {
        return Err(Error::InvalidInput(format!("fields must have {n} entries")));
    }
    let w = mesh.lumped_weights();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..n {
        num += w[k] * (a[k] - b[k]).powi(2);
        den += w[k] * b[k] * b[k];
    }
    if !(den > 0.0) {
        return Err(Error::InvalidInput("relative error against a zero field".into()));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoundaryData, Coefficient, Flux};
    use crate::mesh::{build_coarse_basis, build_fine_mesh, build_partition};

    fn pme1d(left: f64) -> Problem {
        Problem::new(1, 20.0, Coefficient::Layered1d, Flux::PorousMedia { p: 4.0 }, BoundaryData::Affine1d {
            left,
            right: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn zero_data_gives_zero_residual_and_field() {
        let part = build_partition(1, 5).unwrap();
        let mesh = build_fine_mesh(&part, 10).unwrap();
        let basis = build_coarse_basis(&part, &mesh).unwrap();
        let prob = pme1d(0.0);
        let mut sys = SkeletonSystem::new(
            &prob,
            &part,
            &mesh,
            &basis,
            Level::Coarse,
            Backend::Exact,
            LocalSolverConfig::default(),
        )
        .unwrap();
        let g = vec![0.0; 6];
        assert_eq!(sys.residual_skeleton(&g).unwrap(), vec![0.0; 4]);
        assert!(sys.reconstruct(&g).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_1d_residual_is_sum_of_neighbour_fluxes() {
        let part = build_partition(1, 5).unwrap();
        let mesh = build_fine_mesh(&part, 10).unwrap();
        let basis = build_coarse_basis(&part, &mesh).unwrap();
        let prob = pme1d(4.0);
        let cfg = LocalSolverConfig::default();
        let mut sys =
            SkeletonSystem::new(&prob, &part, &mesh, &basis, Level::Coarse, Backend::Exact, cfg).unwrap();
        sys.set_warm_start(false);
        let g = sys.embedding().full(&[3.0, 2.5, 1.0, 0.5]);
        assert_eq!(g[0], 4.0);
        assert_eq!(g[5], 0.0);
        let r = sys.residual_skeleton(&g).unwrap();
        for k in 1..5 {
            let left = crate::dtn::dtn_fine(&prob, &mesh, k - 1, &[g[k - 1], g[k]], &cfg, false).unwrap();
            let right = crate::dtn::dtn_fine(&prob, &mesh, k, &[g[k], g[k + 1]], &cfg, false).unwrap();
            assert_eq!(r[k - 1], left.flux[1] + right.flux[0]);
        }
    }

    #[test]
    fn surrogate_rejected_on_fine_level() {
        let part = build_partition(1, 5).unwrap();
        let mesh = build_fine_mesh(&part, 4).unwrap();
        let basis = build_coarse_basis(&part, &mesh).unwrap();
        let err = SkeletonSystem::new(
            &pme1d(1.0),
            &part,
            &mesh,
            &basis,
            Level::Fine,
            Backend::Surrogate(SurrogateRegistry::default()),
            LocalSolverConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn error_l2_constants() {
        let part = build_partition(2, 2).unwrap();
        let mesh = build_fine_mesh(&part, 3).unwrap();
        let n = mesh.n_vertices();
        assert_eq!(error_l2(&vec![1.0; n], &vec![1.0; n], &mesh).unwrap(), 0.0);
        let e = error_l2(&vec![1.01; n], &vec![1.0; n], &mesh).unwrap();
        assert!((e - 0.01).abs() < 1e-12);
        assert!(error_l2(&vec![1.0; n], &vec![0.0; n], &mesh).is_err());
        let total: f64 = mesh.lumped_weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
