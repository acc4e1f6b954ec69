//! Coarse substructured Newton with exact local maps on the 2D porous-medium
//! problem, printing the convergence history.

use msdtn::experiments::{Case, CaseConfig};
use msdtn::substructure::{Backend, Level, SkeletonSystem};

fn main() -> msdtn::Result<()> {
    let cfg = CaseConfig::preset(Case::Pme2d);
    let geo = cfg.geometry()?;
    let problem = cfg.problem(cfg.boundary_values[0])?;
    let mut system = SkeletonSystem::new(
        &problem,
        &geo.partition,
        &geo.mesh,
        &geo.basis,
        Level::Coarse,
        Backend::Exact,
        cfg.local_config(),
    )?;
    let (g, trace) = system.solve(None, &cfg.newton(cfg.outer_tol), None)?;
    print!("{}", trace.to_csv(true));
    let u = system.reconstruct(&g)?;
    let peak = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("{} coarse unknowns, max u = {peak:.4}", system.embedding().unknowns().len());
    Ok(())
}
