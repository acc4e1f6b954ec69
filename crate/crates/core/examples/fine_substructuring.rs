//! Solves every case on the fine skeleton with exact local maps and compares
//! against the monolithic finite element solution.

use msdtn::experiments::{fine_oracle, Case, CaseConfig};

fn main() -> msdtn::Result<()> {
    for case in Case::ALL {
        let cfg = CaseConfig::preset(case);
        let geo = cfg.geometry()?;
        for &bv in &cfg.boundary_values {
            let o = fine_oracle(&cfg, &geo, bv)?;
            println!(
                "{case} u_b = {bv}: rel. L2 difference {:.2e}, skeleton Newton {} its ({:.2}s), monolithic {} its ({:.2}s)",
                o.relative_error, o.substructured_iterations, o.substructured_seconds, o.monolithic_iterations, o.monolithic_seconds
            );
        }
    }
    Ok(())
}
