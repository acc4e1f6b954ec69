//! End-to-end case pipeline: dataset, training, coarse solves with each
//! backend, reconstruction, metrics and CSV artifacts.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{CaseConfig, Geometry};
use crate::error::{Error, Result};
use crate::fem::solve_monolithic;
use crate::newton::{NewtonConfig, NewtonTrace};
use crate::substructure::{error_l2, Backend, Level, SkeletonSystem};
use crate::surrogate::{generate_dataset, sample_grid, train, DtnSampleSet, SurrogateModel, SurrogateRegistry, TrainReport};

/// Error level at which Newton iteration counts are compared.
pub const ITERATION_ERROR_LEVEL: f64 = 1e-5;

/// Relative Euclidean difference of two coarse vectors.
pub fn coarse_error(g: &[f64], reference: &[f64]) -> f64 {
    let num: f64 = g.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = reference.iter().map(|b| b * b).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub boundary_value: f64,
    /// Relative lumped-`L²(Ω)` error of the surrogate solution against the
    /// exact coarse solution.
    pub solution_error: f64,
    pub exact_iterations: usize,
    pub surrogate_iterations: usize,
    pub warmstart_iterations: usize,
    pub exact_iterations_to_level: Option<usize>,
    pub warmstart_iterations_to_level: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub dataset_seconds: f64,
    pub train_seconds: f64,
    pub exact_solve_seconds: Vec<f64>,
    pub surrogate_solve_seconds: Vec<f64>,
    pub warmstart_solve_seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub case: String,
    pub n_samples: usize,
    /// Relative `L²` interpolation error on a 20×20 grid (1D cases only).
    pub interpolation_error: Option<f64>,
    pub scenarios: Vec<ScenarioReport>,
    pub train: Option<TrainReport>,
    pub timings: Timings,
}

impl ErrorReport {
    /// Deterministic summary CSV (no timings).
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "boundary_value,solution_error,exact_iterations,surrogate_iterations,warmstart_iterations,exact_iterations_to_1e-5,warmstart_iterations_to_1e-5\n",
        );
        let opt = |v: Option<usize>| v.map(|k| k.to_string()).unwrap_or_default();
        for r in &self.scenarios {
            let _ = writeln!(
                s,
                "{},{:e},{},{},{},{},{}",
                r.boundary_value,
                r.solution_error,
                r.exact_iterations,
                r.surrogate_iterations,
                r.warmstart_iterations,
                opt(r.exact_iterations_to_level),
                opt(r.warmstart_iterations_to_level)
            );
        }
        s
    }
}

/// The dataset of subdomain 0 (the coefficient is periodic over subdomains).
pub fn build_dataset(cfg: &CaseConfig, geo: &Geometry) -> Result<DtnSampleSet> {
    let problem = cfg.problem(cfg.boundary_values[0])?;
    generate_dataset(&problem, &geo.mesh, &geo.basis, 0, &cfg.samples()?, &cfg.local_config())
}

/// Relative `L²` error of the surrogate against the exact coarse map over a
/// regular `per_axis^d` grid of the training box; also returns the grid,
/// exact and predicted values.
#[allow(clippy::type_complexity)]
pub fn interpolation_error(
    cfg: &CaseConfig,
    geo: &Geometry,
    model: &SurrogateModel,
    per_axis: usize,
) -> Result<(f64, DtnSampleSet, Vec<Vec<f64>>)> {
    let problem = cfg.problem(cfg.boundary_values[0])?;
    let grid = sample_grid(cfg.input_dim(), per_axis, cfg.u_min, cfg.u_max, false)?;
    let exact = generate_dataset(&problem, &geo.mesh, &geo.basis, 0, &grid, &cfg.local_config())?;
    let pred = model.evaluate_batch(&grid)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (p, e) in pred.iter().zip(&exact.values) {
        for (a, b) in p.iter().zip(e) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    Ok(((num / den).sqrt(), exact, pred))
}

/// Fine substructured solution against the monolithic FEM solution.
#[derive(Debug, Clone, PartialEq)]
pub struct FineOracle {
    pub relative_error: f64,
    pub substructured_iterations: usize,
    pub monolithic_iterations: usize,
    pub substructured_seconds: f64,
    pub monolithic_seconds: f64,
}

pub fn fine_oracle(cfg: &CaseConfig, geo: &Geometry, boundary_value: f64) -> Result<FineOracle> {
    let problem = cfg.problem(boundary_value)?;
    let newton = cfg.newton(cfg.outer_tol);
    let clock = Instant::now();
    let mono = solve_monolithic(&problem, &geo.mesh, &newton).map_err(|e| e.at_stage("monolithic solve"))?;
    let monolithic_seconds = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let mut system = SkeletonSystem::new(
        &problem,
        &geo.partition,
        &geo.mesh,
        &geo.basis,
        Level::Fine,
        Backend::Exact,
        cfg.local_config(),
    )?;
    let (g, trace) = system.solve(None, &newton, None).map_err(|e| e.at_stage("fine substructured solve"))?;
    let u = system.reconstruct(&g)?;
    let substructured_seconds = clock.elapsed().as_secs_f64();
    Ok(FineOracle {
        relative_error: error_l2(&u, &mono.x, &geo.mesh)?,
        substructured_iterations: trace.iterations(),
        monolithic_iterations: mono.trace.iterations(),
        substructured_seconds,
        monolithic_seconds,
    })
}

/// Traces and fields of the three coarse solves of one boundary scenario.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub exact_trace: NewtonTrace,
    pub surrogate_trace: NewtonTrace,
    pub warmstart_trace: NewtonTrace,
    pub exact_field: Vec<f64>,
    pub surrogate_field: Vec<f64>,
    pub seconds: [f64; 3],
}

fn traced_solve(
    system: &mut SkeletonSystem<'_>,
    initial: Option<&[f64]>,
    newton: &NewtonConfig,
    reference: &[f64],
    stage: &'static str,
) -> Result<(Vec<f64>, NewtonTrace, f64)> {
    let start = Instant::now();
    let mut observer = |g: &[f64]| Ok(Some(coarse_error(g, reference)));
    let (g, trace) = system.solve(initial, newton, Some(&mut observer)).map_err(|e| e.at_stage(stage))?;
    Ok((g, trace, start.elapsed().as_secs_f64()))
}

/// Exact coarse solve from zero, surrogate solve from zero, and the exact
/// solve started from the surrogate solution, all traced against a tight
/// reference solution of the exact coarse problem.
pub fn run_scenario(
    cfg: &CaseConfig,
    geo: &Geometry,
    boundary_value: f64,
    registry: &SurrogateRegistry,
) -> Result<ScenarioRun> {
    let problem = &cfg.problem(boundary_value)?;
    let mut exact = SkeletonSystem::new(
        problem,
        &geo.partition,
        &geo.mesh,
        &geo.basis,
        Level::Coarse,
        Backend::Exact,
        cfg.local_config(),
    )?;
    // The reference needs local solves well below its own tolerance, or the
    // coarse residual stalls at the level of the local solver error.
    let mut local = cfg.local_config();
    local.newton.tol = cfg.reference_tol * 1e-2;
    let mut tight = SkeletonSystem::new(
        problem,
        &geo.partition,
        &geo.mesh,
        &geo.basis,
        Level::Coarse,
        Backend::Exact,
        local,
    )?;
    // Relative to the initial residual: the absolute rounding floor grows
    // with the flux scale.
    let zero = vec![0.0; tight.embedding().unknowns().len()];
    let full = tight.embedding().full(&zero);
    let r0 = crate::linalg::norm_inf(&tight.residual_skeleton(&full)?);
    let (reference, _) = tight
        .solve(None, &cfg.newton(cfg.reference_tol * r0.max(1.0)), None)
        .map_err(|e| e.at_stage("reference solve"))?;
    let outer = cfg.newton(cfg.outer_tol);
    let (g_exact, exact_trace, t_exact) = traced_solve(&mut exact, None, &outer, &reference, "exact coarse solve")?;
    let exact_field = exact.reconstruct(&g_exact)?;

    let mut surrogate = SkeletonSystem::new(
        problem,
        &geo.partition,
        &geo.mesh,
        &geo.basis,
        Level::Coarse,
        Backend::Surrogate(registry.clone()),
        cfg.local_config(),
    )?;
    let (g_sur, surrogate_trace, t_sur) =
        traced_solve(&mut surrogate, None, &cfg.newton(cfg.surrogate_tol), &reference, "surrogate coarse solve")?;
    let surrogate_field = surrogate.reconstruct(&g_sur)?;

    exact.clear_warm_states();
    let start = exact.embedding().unknown_part(&g_sur);
    let (_, warmstart_trace, t_warm) =
        traced_solve(&mut exact, Some(&start), &outer, &reference, "warm-started coarse solve")?;

    let report = ScenarioReport {
        boundary_value,
        solution_error: error_l2(&surrogate_field, &exact_field, &geo.mesh)?,
        exact_iterations: exact_trace.iterations(),
        surrogate_iterations: surrogate_trace.iterations(),
        warmstart_iterations: warmstart_trace.iterations(),
        exact_iterations_to_level: exact_trace.iterations_to_error(ITERATION_ERROR_LEVEL),
        warmstart_iterations_to_level: warmstart_trace.iterations_to_error(ITERATION_ERROR_LEVEL),
    };
    Ok(ScenarioRun {
        report,
        exact_trace,
        surrogate_trace,
        warmstart_trace,
        exact_field,
        surrogate_field,
        seconds: [t_exact, t_sur, t_warm],
    })
}

fn fmt_row(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

/// Profile CSV: 1D all vertices, 2D the vertices on the diagonal `x = y`.
pub fn profile_csv(geo: &Geometry, exact: &[f64], surrogate: &[f64]) -> String {
    let mesh = &geo.mesh;
    let mut s = String::new();
    if mesh.dim() == 1 {
        s.push_str("x,u_exact,u_surrogate\n");
        for k in 0..mesh.n_vertices() {
            let _ = writeln!(s, "{}", fmt_row(&[mesh.vertex(k)[0], exact[k], surrogate[k]]));
        }
    } else {
        s.push_str("s,x,y,u_exact,u_surrogate\n");
        let mut diag: Vec<usize> = (0..mesh.n_vertices()).filter(|&k| mesh.vertex(k)[0] == mesh.vertex(k)[1]).collect();
        diag.sort_by(|&a, &b| mesh.vertex(a)[0].total_cmp(&mesh.vertex(b)[0]));
        for k in diag {
            let [x, y] = mesh.vertex(k);
            let _ = writeln!(s, "{}", fmt_row(&[x * std::f64::consts::SQRT_2, x, y, exact[k], surrogate[k]]));
        }
    }
    s
}

/// Field CSV over all vertices.
pub fn field_csv(geo: &Geometry, exact: &[f64], surrogate: &[f64]) -> String {
    let mut s = String::from("x,y,u_exact,u_surrogate\n");
    for k in 0..geo.mesh.n_vertices() {
        let [x, y] = geo.mesh.vertex(k);
        let _ = writeln!(s, "{}", fmt_row(&[x, y, exact[k], surrogate[k]]));
    }
    s
}

fn interpolation_csv(exact: &DtnSampleSet, pred: &[Vec<f64>]) -> String {
    let d = exact.dim;
    let mut header: Vec<String> = (1..=d).map(|k| format!("u_{k}")).collect();
    header.extend((1..=d).map(|k| format!("f_{k}")));
    header.extend((1..=d).map(|k| format!("f_{k}_surrogate")));
    let mut s = header.join(",") + "\n";
    for ((u, f), p) in exact.inputs.iter().zip(&exact.values).zip(pred) {
        let row: Vec<f64> = u.iter().chain(f).chain(p).copied().collect();
        let _ = writeln!(s, "{}", fmt_row(&row));
    }
    s
}

/// Runs the full pipeline. Without `model` the surrogate is trained from a
/// fresh dataset. Artifacts are written to `out` when given; everything but
/// `timings.json` is deterministic.
pub fn run_case(cfg: &CaseConfig, model: Option<SurrogateModel>, out: Option<&Path>) -> Result<ErrorReport> {
    cfg.validate()?;
    let geo = cfg.geometry().map_err(|e| e.at_stage("mesh"))?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), cfg.to_kv())?;
    }
    let mut timings = Timings {
        dataset_seconds: 0.0,
        train_seconds: 0.0,
        exact_solve_seconds: vec![],
        surrogate_solve_seconds: vec![],
        warmstart_solve_seconds: vec![],
    };
    let (model, train_report, n_samples) = match model {
        Some(m) => (m, None, 0),
        None => {
            let t = Instant::now();
            let dataset = build_dataset(cfg, &geo).map_err(|e| e.at_stage("dataset"))?;
            timings.dataset_seconds = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let (m, report) = train(&dataset, &cfg.train_config()).map_err(|e| e.at_stage("training"))?;
            timings.train_seconds = t.elapsed().as_secs_f64();
            if let Some(dir) = out {
                dataset.write(&dir.join("dataset.csv"))?;
                m.save(&dir.join("model.json"))?;
            }
            (m, Some(report), dataset.len())
        }
    };
    if model.input_dim() != cfg.input_dim() {
        return Err(Error::InvalidInput(format!(
            "model takes {} inputs but {} has {}",
            model.input_dim(),
            cfg.case,
            cfg.input_dim()
        )));
    }
    let interpolation = if cfg.dim() == 1 {
        let (err, exact, pred) =
            interpolation_error(cfg, &geo, &model, 20).map_err(|e| e.at_stage("interpolation error"))?;
        if let Some(dir) = out {
            std::fs::write(dir.join("interpolation.csv"), interpolation_csv(&exact, &pred))?;
        }
        Some(err)
    } else {
        None
    };
    let registry = SurrogateRegistry::shared(model);
    let mut scenarios = Vec::new();
    for (k, &bv) in cfg.boundary_values.iter().enumerate() {
        let run = run_scenario(cfg, &geo, bv, &registry)?;
        timings.exact_solve_seconds.push(run.seconds[0]);
        timings.surrogate_solve_seconds.push(run.seconds[1]);
        timings.warmstart_solve_seconds.push(run.seconds[2]);
        if let Some(dir) = out {
            std::fs::write(dir.join(format!("profile_{k}.csv")), profile_csv(&geo, &run.exact_field, &run.surrogate_field))?;
            if cfg.dim() == 2 {
                std::fs::write(dir.join(format!("field_{k}.csv")), field_csv(&geo, &run.exact_field, &run.surrogate_field))?;
            }
            std::fs::write(dir.join(format!("trace_{k}_exact.csv")), run.exact_trace.to_csv(false))?;
            std::fs::write(dir.join(format!("trace_{k}_surrogate.csv")), run.surrogate_trace.to_csv(false))?;
            std::fs::write(dir.join(format!("trace_{k}_warmstart.csv")), run.warmstart_trace.to_csv(false))?;
        }
        scenarios.push(run.report);
    }
    let report = ErrorReport {
        case: cfg.case.to_string(),
        n_samples,
        interpolation_error: interpolation,
        scenarios,
        train: train_report,
        timings,
    };
    if let Some(dir) = out {
        std::fs::write(dir.join("errors.csv"), report.to_csv())?;
        let mut summary = String::from("case,n_samples,interpolation_error\n");
        let interp = report.interpolation_error.map(|e| format!("{e:e}")).unwrap_or_default();
        let _ = writeln!(summary, "{},{},{}", report.case, report.n_samples, interp);
        std::fs::write(dir.join("summary.csv"), summary)?;
        std::fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&report.timings)?)?;
    }
    Ok(report)
}
