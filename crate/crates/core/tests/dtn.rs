mod common;

use common::{case, fd_jacobian, rel_error, rng, uniform};
use msdtn::dtn::{LocalDtn, LocalSolverConfig};
use msdtn::experiments::Case;
use msdtn::fem::{BoundaryData, Coefficient, Flux, Problem};
use msdtn::mesh::{build_coarse_basis, build_fine_mesh, build_partition};

fn tight() -> LocalSolverConfig {
    LocalSolverConfig::with_tol(1e-13)
}

#[test]
fn fine_schur_jacobian_matches_finite_differences() {
    for (k, c) in Case::ALL.into_iter().enumerate() {
        let cells = if c == Case::Pme2d { Some(6) } else { None };
        let (cfg, geo, problem) = case(c, cells);
        let local = LocalDtn::new(&problem, &geo.mesh, 1).unwrap();
        let mut r = rng(11 + k as u64);
        for _ in 0..3 {
            let g = uniform(&mut r, local.system().n_boundary(), 0.1, cfg.u_max);
            let base = local.dtn_fine(&g, &tight(), true, None).unwrap();
            let fd = fd_jacobian(&g, 1e-4, |x| local.dtn_fine(x, &tight(), false, Some(&base.interior_state)).unwrap().flux);
            let err = rel_error(base.jacobian.as_ref().unwrap(), &fd);
            assert!(err <= 1e-5, "{c}: fine jacobian error {err:e}");
        }
    }
}

#[test]
fn coarse_jacobian_matches_finite_differences() {
    for (k, c) in Case::ALL.into_iter().enumerate() {
        let (cfg, geo, problem) = case(c, None);
        let local = LocalDtn::new(&problem, &geo.mesh, 2).unwrap();
        let phi = geo.basis.local(2);
        let mut r = rng(23 + k as u64);
        for _ in 0..3 {
            let v = uniform(&mut r, phi.ncols(), 0.1, cfg.u_max);
            let base = local.dtn_coarse(phi, &v, &tight(), true, None).unwrap();
            let fd = fd_jacobian(&v, 1e-4, |x| {
                local.dtn_coarse(phi, x, &tight(), false, Some(&base.interior_state)).unwrap().flux
            });
            let err = rel_error(base.jacobian.as_ref().unwrap(), &fd);
            assert!(err <= 1e-5, "{c}: coarse jacobian error {err:e} at {v:?}\n{}\n{fd}", base.jacobian.as_ref().unwrap());
        }
    }
}

#[test]
fn analytic_one_dimensional_porous_medium() {
    // a = 0, K = 1: the nodal potential u^p is affine, the flux is the jump
    // of the potential over the subdomain length.
    let part = build_partition(1, 5).unwrap();
    let mesh = build_fine_mesh(&part, 40).unwrap();
    let p = 4.0;
    let problem = Problem::new(
        1,
        0.0,
        Coefficient::Constant { value: 1.0 },
        Flux::PorousMedia { p },
        BoundaryData::Constant { value: 0.0 },
    )
    .unwrap();
    let local = LocalDtn::new(&problem, &mesh, 3).unwrap();
    let (ul, ur) = (1.7_f64, 0.6_f64);
    // u = 0 is degenerate when a = 0, so start from a positive state.
    let start = vec![1.0; local.system().n_interior()];
    let out = local.dtn_fine(&[ul, ur], &tight(), false, Some(&start)).unwrap();
    let jump = (ul.powf(p) - ur.powf(p)) / 0.2;
    assert!((out.flux[0] - jump).abs() <= 1e-10 * jump);
    assert!((out.flux[1] + jump).abs() <= 1e-10 * jump);

    let (interior, _) = local.solve_local(&[ul, ur], &tight(), Some(&start)).unwrap();
    let n = interior.len() + 1;
    for (k, u) in interior.iter().enumerate() {
        let t = (k + 1) as f64 / n as f64;
        let w = (1.0 - t) * ul.powf(p) + t * ur.powf(p);
        assert!((u.powf(p) - w).abs() < 1e-10, "node {k}");
    }
}

#[test]
fn one_dimensional_sign_structure() {
    let (cfg, geo, problem) = case(Case::Pme1d, None);
    let local = LocalDtn::new(&problem, &geo.mesh, 0).unwrap();
    for i in 0..10 {
        for j in 0..10 {
            let g = [0.1 + (cfg.u_max - 0.1) * (i as f64 + 0.5) / 10.0, 0.1 + (cfg.u_max - 0.1) * (j as f64 + 0.5) / 10.0];
            let jac = local.dtn_fine(&g, &LocalSolverConfig::default(), true, None).unwrap().jacobian.unwrap();
            assert!(jac[(0, 0)] > 0.0 && jac[(1, 1)] > 0.0);
            assert!(jac[(0, 1)] <= 1e-10 && jac[(1, 0)] <= 1e-10);
        }
    }
}

#[test]
fn periodic_coefficients_give_identical_coarse_maps() {
    for c in Case::ALL {
        let (cfg, geo, problem) = case(c, None);
        let d = cfg.input_dim();
        let v = uniform(&mut rng(5), d, 0.1, cfg.u_max);
        let first = LocalDtn::new(&problem, &geo.mesh, 0)
            .unwrap()
            .dtn_coarse(geo.basis.local(0), &v, &LocalSolverConfig::default(), true, None)
            .unwrap();
        for i in 1..geo.partition.n_subdomains() {
            let other = LocalDtn::new(&problem, &geo.mesh, i)
                .unwrap()
                .dtn_coarse(geo.basis.local(i), &v, &LocalSolverConfig::default(), true, None)
                .unwrap();
            for (a, b) in first.flux.iter().zip(&other.flux) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{c}: subdomain {i}: {a} vs {b}");
            }
            let diff = (first.jacobian.as_ref().unwrap() - other.jacobian.as_ref().unwrap()).amax();
            assert!(diff <= 1e-12 * (1.0 + first.jacobian.as_ref().unwrap().amax()));
        }
    }
}

#[test]
fn converged_state_solves_the_interior_equations() {
    for c in Case::ALL {
        let (cfg, geo, problem) = case(c, None);
        let local = LocalDtn::new(&problem, &geo.mesh, 1).unwrap();
        let sys = local.system();
        let mut r = rng(3);
        for _ in 0..5 {
            let g = uniform(&mut r, sys.n_boundary(), 0.0, cfg.u_max);
            let (interior, _) = local.solve_local(&g, &LocalSolverConfig::default(), None).unwrap();
            let res = sys.elements().residual(&sys.combine(&interior, &g)).unwrap();
            let worst = sys.interior().iter().map(|&k| res[k].abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-10, "{c}: interior residual {worst:e}");
        }
    }
}

#[test]
fn coarse_map_is_the_projected_fine_map() {
    let part = build_partition(2, 2).unwrap();
    let mesh = build_fine_mesh(&part, 5).unwrap();
    let basis = build_coarse_basis(&part, &mesh).unwrap();
    let (_, _, problem) = case(Case::Pme2d, Some(5));
    let local = LocalDtn::new(&problem, &mesh, 3).unwrap();
    let v = [0.3, 1.1, 0.2, 0.8];
    let phi = basis.local(3);
    let g = phi * nalgebra::DVector::from_column_slice(&v);
    let fine = local.dtn_fine(g.as_slice(), &tight(), true, None).unwrap();
    let coarse = local.dtn_coarse(phi, &v, &tight(), true, None).unwrap();
    let projected = phi.transpose() * nalgebra::DVector::from_column_slice(&fine.flux);
    for (a, b) in coarse.flux.iter().zip(projected.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
    let pj = phi.transpose() * fine.jacobian.unwrap() * phi;
    assert!((coarse.jacobian.unwrap() - pj).amax() < 1e-12);
}
