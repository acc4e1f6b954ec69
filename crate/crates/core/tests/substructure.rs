mod common;

use common::{case, fd_jacobian, rel_error, rng, uniform};
use msdtn::dtn::LocalSolverConfig;
use msdtn::experiments::{fine_oracle, Case, CaseConfig};
use msdtn::fem::solve_monolithic;
use msdtn::linalg::norm_inf;
use msdtn::newton::NewtonConfig;
use msdtn::substructure::{Backend, Level, SkeletonSystem};
use msdtn::surrogate::{Scaling, SurrogateModel, SurrogateNet, SurrogateRegistry, TrainConfig};

fn random_model(d: usize, u_max: f64, seed: u64) -> SurrogateModel {
    let mut r = rng(seed);
    let scaling = Scaling { u_min: 0.0, u_max, output_scale: 3.0 };
    let nets = (0..d).map(|l| SurrogateNet::new(d, &[8, 8], l, scaling, &mut r).unwrap()).collect();
    let cfg = CaseConfig::preset(if d == 2 { Case::Pme1d } else { Case::Pme2d });
    let train: TrainConfig = cfg.train_config();
    SurrogateModel::new(nets, train, String::new()).unwrap()
}

#[test]
fn monolithic_trace_zeroes_the_fine_skeleton_residual() {
    for c in Case::ALL {
        let cells = if c == Case::Pme2d { Some(6) } else { None };
        let (cfg, geo, problem) = case(c, cells);
        let mono = solve_monolithic(&problem, &geo.mesh, &NewtonConfig::with_tol(1e-12)).unwrap();
        let mut sys = SkeletonSystem::new(
            &problem,
            &geo.partition,
            &geo.mesh,
            &geo.basis,
            Level::Fine,
            Backend::Exact,
            LocalSolverConfig::with_tol(1e-13),
        )
        .unwrap();
        let g = geo.basis.skeleton().restrict(&mono.x);
        let r = sys.residual_skeleton(&g).unwrap();
        assert!(norm_inf(&r) <= 1e-9, "{c}: {:e} ({})", norm_inf(&r), cfg.case);
    }
}

#[test]
fn skeleton_jacobians_match_finite_differences() {
    for c in Case::ALL {
        let cells = if c == Case::Pme2d { Some(5) } else { Some(10) };
        let (cfg, geo, problem) = case(c, cells);
        for level in [Level::Fine, Level::Coarse] {
            let mut sys = SkeletonSystem::new(
                &problem,
                &geo.partition,
                &geo.mesh,
                &geo.basis,
                level,
                Backend::Exact,
                LocalSolverConfig::with_tol(1e-13),
            )
            .unwrap();
            let emb = sys.embedding().clone();
            let x = uniform(&mut rng(9), emb.unknowns().len(), 0.1, cfg.u_max);
            let (_, jac) = sys.residual_and_jacobian(&emb.full(&x)).unwrap();
            let fd = fd_jacobian(&x, 1e-4, |y| sys.residual_skeleton(&emb.full(y)).unwrap());
            let err = rel_error(&jac, &fd);
            assert!(err <= 1e-5, "{c} {level:?}: {err:e}");
        }
    }
}

#[test]
fn surrogate_skeleton_jacobian_matches_finite_differences() {
    for c in [Case::Pme1d, Case::Pme2d] {
        let (cfg, geo, problem) = case(c, Some(4));
        let registry = SurrogateRegistry::shared(random_model(cfg.input_dim(), cfg.u_max, 4));
        let mut sys = SkeletonSystem::new(
            &problem,
            &geo.partition,
            &geo.mesh,
            &geo.basis,
            Level::Coarse,
            Backend::Surrogate(registry),
            cfg.local_config(),
        )
        .unwrap();
        let emb = sys.embedding().clone();
        let x = uniform(&mut rng(10), emb.unknowns().len(), 0.1, cfg.u_max);
        let (_, jac) = sys.residual_and_jacobian(&emb.full(&x)).unwrap();
        let fd = fd_jacobian(&x, 1e-4, |y| sys.residual_skeleton(&emb.full(y)).unwrap());
        assert!(rel_error(&jac, &fd) <= 1e-5);
    }
}

#[test]
fn surrogate_backend_is_checked() {
    let (cfg, geo, problem) = case(Case::Pme1d, Some(4));
    let wrong = SurrogateRegistry::shared(random_model(4, cfg.u_max, 1));
    let build = |level, backend| {
        SkeletonSystem::new(&problem, &geo.partition, &geo.mesh, &geo.basis, level, backend, cfg.local_config())
    };
    assert!(build(Level::Coarse, Backend::Surrogate(wrong)).is_err());
    let right = SurrogateRegistry::shared(random_model(2, cfg.u_max, 1));
    assert!(build(Level::Fine, Backend::Surrogate(right.clone())).is_err());
    let mut sys = build(Level::Coarse, Backend::Exact).unwrap();
    assert!(sys.set_backend(Backend::Surrogate(right)).is_ok());
    assert!(sys.set_backend(Backend::Surrogate(SurrogateRegistry::default())).is_err());
}

#[test]
fn dirichlet_entries_never_change_and_fluxes_cancel() {
    for c in Case::ALL {
        let (cfg, geo, problem) = case(c, None);
        let mut sys = SkeletonSystem::new(
            &problem,
            &geo.partition,
            &geo.mesh,
            &geo.basis,
            Level::Coarse,
            Backend::Exact,
            cfg.local_config(),
        )
        .unwrap();
        let emb = sys.embedding().clone();
        let mut seen = 0;
        let mut observer = |g: &[f64]| {
            for (&k, &v) in emb.fixed().iter().zip(emb.fixed_values()) {
                assert_eq!(g[k].to_bits(), v.to_bits());
            }
            seen += 1;
            Ok(None)
        };
        let newton = cfg.newton(cfg.outer_tol);
        let (g, trace) = sys.solve(None, &newton, Some(&mut observer)).unwrap();
        assert_eq!(seen, trace.rows.len());
        assert!(norm_inf(&sys.residual_skeleton(&g).unwrap()) <= cfg.outer_tol);
        let mut u = emb.unknowns().iter().chain(emb.fixed()).copied().collect::<Vec<_>>();
        u.sort_unstable();
        assert_eq!(u, (0..emb.size()).collect::<Vec<_>>());
    }
}

#[test]
fn fine_substructuring_reproduces_the_monolithic_solution() {
    for c in Case::ALL {
        let mut cfg = CaseConfig::preset(c);
        cfg.cells_per_subdomain = if c == Case::Pme2d { 6 } else { 16 };
        let geo = cfg.geometry().unwrap();
        let oracle = fine_oracle(&cfg, &geo, *cfg.boundary_values.last().unwrap()).unwrap();
        assert!(oracle.relative_error <= 1e-8, "{c}: {:e}", oracle.relative_error);
    }
}

#[test]
fn one_dimensional_coarse_and_fine_levels_coincide() {
    let (cfg, geo, problem) = case(Case::Plap1d, None);
    let newton = cfg.newton(cfg.outer_tol);
    let solve = |level| {
        let mut sys = SkeletonSystem::new(
            &problem,
            &geo.partition,
            &geo.mesh,
            &geo.basis,
            level,
            Backend::Exact,
            cfg.local_config(),
        )
        .unwrap();
        let (g, _) = sys.solve(None, &newton, None).unwrap();
        sys.reconstruct(&g).unwrap()
    };
    let (a, b) = (solve(Level::Fine), solve(Level::Coarse));
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
}
