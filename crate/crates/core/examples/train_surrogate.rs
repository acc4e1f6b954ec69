//! Samples the coarse local map of the 1D porous-medium problem, trains the
//! two component networks and reports the interpolation error on a 20×20 grid.
//!
//! ```text
//! cargo run --release --example train_surrogate [-- <ns> <epochs>]
//! ```

use msdtn::experiments::{build_dataset, interpolation_error, Case, CaseConfig};
use msdtn::surrogate::train;

fn main() -> msdtn::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cfg = CaseConfig::preset(Case::Pme1d);
    cfg.ns = args.first().copied().unwrap_or(3);
    cfg.epochs = args.get(1).copied().unwrap_or(2000);
    let geo = cfg.geometry()?;

    let data = build_dataset(&cfg, &geo)?;
    println!("{} samples in [{}, {}]^2", data.len(), cfg.u_min, cfg.u_max);
    let (model, report) = train(&data, &cfg.train_config())?;
    for c in &report.components {
        println!(
            "component {}: loss {:.3e} -> {:.3e} (L0 {:.2e}, L1 {:.2e}, Lmon {:.2e})",
            c.component, c.initial.total, c.last.total, c.last.l0, c.last.l1, c.last.lmon
        );
    }
    let (err, _, _) = interpolation_error(&cfg, &geo, &model, 20)?;
    println!("interpolation error {err:.3e}");
    Ok(())
}
