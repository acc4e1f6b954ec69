//! Runs a case preset end to end and writes its CSV artifacts.
//!
//! ```text
//! cargo run --release --example reproduce_case -- pme1d out/pme1d
//! ```

use std::path::PathBuf;

use msdtn::experiments::{reproduce, Case};

fn main() -> msdtn::Result<()> {
    let mut args = std::env::args().skip(1);
    let case: Case = args.next().as_deref().unwrap_or("plap1d").parse()?;
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out").join(case.to_string()));
    let report = reproduce(case, 7, &out)?;
    print!("{}", report.to_csv());
    if let Some(e) = report.interpolation_error {
        println!("interpolation error {e:.3e}");
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
