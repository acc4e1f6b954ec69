//! Local Dirichlet-to-Neumann maps of one 1D porous-medium subdomain: the
//! fine map, its Schur-complement Jacobian, and the coarse map.

use msdtn::dtn::{LocalDtn, LocalSolverConfig};
use msdtn::experiments::{Case, CaseConfig};

fn main() -> msdtn::Result<()> {
    let cfg = CaseConfig::preset(Case::Pme1d);
    let geo = cfg.geometry()?;
    let problem = cfg.problem(4.0)?;
    let local = LocalDtn::new(&problem, &geo.mesh, 2)?;
    let tol = LocalSolverConfig::with_tol(1e-12);

    for g in [[0.5, 0.5], [2.0, 1.0], [1.0, 3.5]] {
        let out = local.dtn_fine(&g, &tol, true, None)?;
        let j = out.jacobian.unwrap();
        println!(
            "g = {g:?}: flux = [{:.4}, {:.4}], J = [[{:.3}, {:.3}], [{:.3}, {:.3}]], {} Newton steps",
            out.flux[0], out.flux[1], j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)], out.newton_iterations
        );
    }

    // In 1D the coarse and fine boundary values coincide.
    let coarse = local.dtn_coarse(geo.basis.local(2), &[2.0, 1.0], &tol, false, None)?;
    println!("coarse map at (2, 1): {:?}", coarse.flux);
    Ok(())
}
