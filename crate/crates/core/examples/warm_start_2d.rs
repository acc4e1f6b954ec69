//! 2D porous medium: train a surrogate with n_s = 3^4 samples, solve the
//! coarse problem with it, then restart the exact solver from that solution.

use msdtn::experiments::{build_dataset, run_scenario, Case, CaseConfig, ITERATION_ERROR_LEVEL};
use msdtn::surrogate::{train, SurrogateRegistry};

fn main() -> msdtn::Result<()> {
    let cfg = CaseConfig::preset(Case::Pme2d);
    let geo = cfg.geometry()?;
    let data = build_dataset(&cfg, &geo)?;
    let (model, _) = train(&data, &cfg.train_config())?;
    let registry = SurrogateRegistry::shared(model);

    let run = run_scenario(&cfg, &geo, cfg.boundary_values[0], &registry)?;
    let r = &run.report;
    println!("surrogate solution error {:.2}%", 100.0 * r.solution_error);
    println!(
        "iterations to {ITERATION_ERROR_LEVEL:e}: from zero {:?}, warm start {:?}",
        r.exact_iterations_to_level, r.warmstart_iterations_to_level
    );
    println!("\nexact from zero\n{}", run.exact_trace.to_csv(false));
    println!("exact from surrogate\n{}", run.warmstart_trace.to_csv(false));
    Ok(())
}
