mod common;

use common::{case, fd_jacobian, rel_error, rng, uniform};
use msdtn::dtn::LocalSolverConfig;
use msdtn::error::Error;
use msdtn::experiments::Case;
use msdtn::surrogate::loss::{loss, monte_carlo_points, monotonicity_integrand};
use msdtn::surrogate::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn scaling(u_max: f64) -> Scaling {
    Scaling { u_min: 0.0, u_max, output_scale: 2.5 }
}

fn small_targets(net_dim: usize, n: usize, seed: u64) -> Targets {
    let mut r = rng(seed);
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| uniform(&mut r, net_dim, 0.0, 4.0)).collect();
    let values = uniform(&mut r, n, -2.0, 2.0);
    let gradients = (0..n).map(|_| uniform(&mut r, net_dim, -1.0, 1.0)).collect();
    Targets { inputs, values, gradients }
}

fn loss_config(c0: f64, c1: f64, c_mon: f64, monotonicity: Monotonicity) -> LossConfig {
    LossConfig { c0, c1, c_mon, monotonicity, quadrature: Quadrature::MonteCarlo { points: 64 }, u_min: 0.0, u_max: 4.0 }
}

fn small_dataset() -> DtnSampleSet {
    let (cfg, geo, problem) = case(Case::Pme1d, None);
    let samples = sample_grid(2, 3, cfg.u_min, cfg.u_max, false).unwrap();
    generate_dataset(&problem, &geo.mesh, &geo.basis, 1, &samples, &cfg.local_config()).unwrap()
}

fn quick_train(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: vec![10, 10],
        epochs,
        learning_rate: 1e-2,
        final_learning_rate: 1e-3,
        seed,
        loss: LossConfig { quadrature: Quadrature::Grid { per_axis: 8 }, ..loss_config(1.0, 0.1, 1.0, Monotonicity::FullSign) },
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut r = rng(1);
    for d in [2, 4] {
        for l in 0..d {
            let net = SurrogateNet::new(d, &[16, 16], l, scaling(4.0), &mut r).unwrap();
            for _ in 0..5 {
                let u = uniform(&mut r, d, 0.0, 4.0);
                let (_, g) = net.forward_with_input_jacobian(&u).unwrap();
                let fd = fd_jacobian(&u, 1e-5, |x| vec![net.forward(x).unwrap()]);
                let err = rel_error(&DMatrix::from_row_slice(1, d, &g), &fd);
                assert!(err <= 1e-6, "d={d} l={l}: {err:e}");
            }
        }
    }
}

#[test]
fn loss_parameter_gradient_matches_finite_differences() {
    let mut r = rng(2);
    let d = 3;
    let targets = small_targets(d, 12, 3);
    let mon = monte_carlo_points(&mut r, d, 64, 0.0, 4.0);
    let terms = [
        ("L0", loss_config(1.0, 0.0, 0.0, Monotonicity::FullSign)),
        ("L1", loss_config(0.0, 1.0, 0.0, Monotonicity::FullSign)),
        ("Lmon full", loss_config(0.0, 0.0, 1.0, Monotonicity::FullSign)),
        ("Lmon diagonal", loss_config(0.0, 0.0, 1.0, Monotonicity::DiagonalOnly)),
    ];
    for (name, cfg) in terms {
        let net = SurrogateNet::new(d, &[8, 8], 1, scaling(4.0), &mut r).unwrap();
        let (_, grad) = loss(&net, &targets, &cfg, &mon, true).unwrap();
        let grad = grad.unwrap();
        let theta = net.params().to_vec();
        let fd = fd_jacobian(&theta, 1e-6, |p| {
            let trial = SurrogateNet::from_params(d, &[8, 8], 1, net.scaling(), p.to_vec()).unwrap();
            vec![loss(&trial, &targets, &cfg, &mon, false).unwrap().0.total]
        });
        let err = rel_error(&DMatrix::from_row_slice(1, theta.len(), &grad), &fd);
        assert!(err <= 1e-5, "{name}: {err:e}");
    }
}

#[test]
fn loss_terms_add_up_with_their_weights() {
    let mut r = rng(5);
    let targets = small_targets(2, 6, 6);
    let mon = monte_carlo_points(&mut r, 2, 32, 0.0, 4.0);
    let net = SurrogateNet::new(2, &[6], 0, scaling(4.0), &mut r).unwrap();
    let cfg = loss_config(0.7, 0.2, 3.0, Monotonicity::FullSign);
    let (t, _) = loss(&net, &targets, &cfg, &mon, false).unwrap();
    assert!((t.total - (0.7 * t.l0 + 0.2 * t.l1 + 3.0 * t.lmon)).abs() <= 1e-12 * t.total.abs());
    let pen = monotonicity_integrand(&net, &mon, Monotonicity::FullSign).unwrap();
    let mean = pen.iter().sum::<f64>() / pen.len() as f64;
    assert!((t.lmon - 16.0 * mean).abs() <= 1e-12 * t.lmon.max(1e-300));
}

#[test]
fn save_load_round_trip_is_exact() {
    let data = small_dataset();
    let (model, _) = train(&data, &quick_train(20, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let (back, warnings) = SurrogateModel::load(&path, Some(2), Some(model.provenance_hash())).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(back, model);
    let v = [0.7, 2.9];
    let (a, ja) = model.evaluate(&v).unwrap();
    let (b, jb) = back.evaluate(&v).unwrap();
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(ja, jb);
}

#[test]
fn load_checks_input_size_and_provenance() {
    let data = small_dataset();
    let (model, _) = train(&data, &quick_train(2, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    assert!(matches!(SurrogateModel::load(&path, Some(4), None), Err(Error::Malformed { .. })));
    let (_, warnings) = SurrogateModel::load(&path, Some(2), Some("deadbeef")).unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].contains("provenance"));
    assert!(model.evaluate(&[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn dataset_round_trip_and_jacobian_rows() {
    let (cfg, geo, problem) = case(Case::Pme1d, None);
    let data = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    data.write(&path).unwrap();
    let back = DtnSampleSet::read(&path).unwrap();
    assert_eq!(back.inputs, data.inputs);
    assert_eq!(back.meta, data.meta);
    for k in 0..data.len() {
        for (a, b) in back.jacobians[k].iter().zip(&data.jacobians[k]) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }
    let local = LocalSolverConfig::with_tol(1e-13);
    for s in [1, 4, 7] {
        let v = &data.inputs[s];
        let fd = fd_jacobian(v, 1e-4, |x| {
            generate_dataset(&problem, &geo.mesh, &geo.basis, 1, &[x.to_vec()], &local).unwrap().values[0].clone()
        });
        let jac = DMatrix::from_row_slice(2, 2, &data.jacobians[s]);
        let err = rel_error(&jac, &fd);
        assert!(err <= 1e-5, "sample {s} at {v:?}: {err:e}");
    }
    assert!(cfg.u_max > 0.0);
}

#[test]
fn training_lowers_the_loss_and_is_deterministic() {
    let data = small_dataset();
    let cfg = quick_train(300, 11);
    let (a, report) = train(&data, &cfg).unwrap();
    for c in &report.components {
        assert!(c.last.total < 0.1 * c.initial.total, "{c:?}");
    }
    let (b, _) = train(&data, &cfg).unwrap();
    assert_eq!(a, b);
    let (c, _) = train(&data, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn training_rejects_bad_configs() {
    let data = small_dataset();
    let mut cfg = quick_train(1, 0);
    cfg.loss.c1 = -1.0;
    assert!(matches!(train(&data, &cfg), Err(Error::Config(_))));
    let mut cfg = quick_train(1, 0);
    cfg.hidden = vec![];
    assert!(matches!(train(&data, &cfg), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// With `c0 = c1 = 0` the loss is the monotonicity penalty alone, which
    /// is nonnegative and vanishes for a net that is increasing in its own
    /// component and decreasing in the others.
    #[test]
    fn monotonicity_penalty_is_nonnegative(seed in 0u64..1000, l in 0usize..3) {
        let mut r = rng(seed);
        let net = SurrogateNet::new(3, &[5], l, scaling(4.0), &mut r).unwrap();
        let pts = monte_carlo_points(&mut r, 3, 20, 0.0, 4.0);
        for variant in [Monotonicity::FullSign, Monotonicity::DiagonalOnly] {
            let pen = monotonicity_integrand(&net, &pts, variant).unwrap();
            prop_assert!(pen.iter().all(|p| *p >= 0.0));
        }
        let full = monotonicity_integrand(&net, &pts, Monotonicity::FullSign).unwrap();
        let diag = monotonicity_integrand(&net, &pts, Monotonicity::DiagonalOnly).unwrap();
        prop_assert!(full.iter().zip(&diag).all(|(f, g)| f >= g));
    }

    #[test]
    fn batch_and_single_evaluation_agree(seed in 0u64..1000) {
        let mut r = rng(seed);
        let nets = (0..2).map(|l| SurrogateNet::new(2, &[6, 6], l, scaling(4.0), &mut r).unwrap()).collect();
        let model = SurrogateModel::new(nets, quick_train(1, 0), String::new()).unwrap();
        let pts: Vec<Vec<f64>> = (0..5).map(|_| uniform(&mut r, 2, 0.0, 4.0)).collect();
        let batch = model.evaluate_batch(&pts).unwrap();
        for (p, b) in pts.iter().zip(&batch) {
            let (v, _) = model.evaluate(p).unwrap();
            for (x, y) in v.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-13 * y.abs().max(1.0));
            }
        }
    }
}

#[test]
fn hessian_vector_product_matches_finite_differences() {
    let mut r = rng(21);
    let net = SurrogateNet::new(4, &[12, 12], 2, scaling(1.2), &mut r).unwrap();
    for _ in 0..5 {
        let u = uniform(&mut r, 4, 0.0, 1.2);
        let w = uniform(&mut r, 4, -1.0, 1.0);
        let hw = net.input_hessian_vector(&u, &w).unwrap();
        let fd = fd_jacobian(&u, 1e-5, |x| {
            let (_, g) = net.forward_with_input_jacobian(x).unwrap();
            vec![g.iter().zip(&w).map(|(a, b)| a * b).sum()]
        });
        let err = rel_error(&DMatrix::from_row_slice(1, 4, &hw), &fd);
        assert!(err <= 1e-6, "{err:e}");
    }
}

#[test]
fn extension_outside_the_box_is_consistent() {
    let mut r = rng(22);
    let nets = (0..4).map(|l| SurrogateNet::new(4, &[10, 10], l, scaling(1.2), &mut r).unwrap()).collect();
    let model = SurrogateModel::new(nets, quick_train(1, 0), String::new()).unwrap();
    let inside = [0.3, 0.7, 1.1, 0.05];
    assert_eq!(model.evaluate_extended(&inside).unwrap(), model.evaluate(&inside).unwrap());
    for v in [[-0.2, 0.7, 1.1, 0.4], [0.5, 1.5, -0.3, 0.4], [-0.1, -0.1, 1.4, 1.3]] {
        let (_, jac) = model.evaluate_extended(&v).unwrap();
        let fd = fd_jacobian(&v, 1e-5, |x| model.evaluate_extended(x).unwrap().0);
        let err = rel_error(&jac, &fd);
        assert!(err <= 1e-6, "{v:?}: {err:e}");
    }
    // Far outside, each component is increasing in its own input.
    for l in 0..4 {
        let along = |t: f64| {
            let mut v = inside;
            v[l] = t;
            model.evaluate_extended(&v).unwrap().0[l]
        };
        let ts = [-80.0, -40.0, -20.0, 20.0, 40.0, 80.0];
        assert!(ts.windows(2).all(|t| along(t[0]) < along(t[1])), "component {l}");
    }
}
