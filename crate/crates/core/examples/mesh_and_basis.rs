//! Builds the 2D partition, fine mesh and coarse basis, and prints what each
//! region and restriction looks like.
//!
//! ```text
//! cargo run --release --example mesh_and_basis [-- <out-dir>]
//! ```
//! With an output directory the mesh is written as `vertices.csv` and
//! `elements.csv`.

use msdtn::mesh::{build_coarse_basis, build_fine_mesh, build_partition, Region};

fn main() -> msdtn::Result<()> {
    let partition = build_partition(2, 5)?;
    let mesh = build_fine_mesh(&partition, 18)?;
    let basis = build_coarse_basis(&partition, &mesh)?;

    println!("{} subdomains, {} coarse nodes ({} interior)", partition.n_subdomains(), partition.coarse_nodes().len(), partition.n_interior_coarse_nodes());
    println!("{} vertices, {} triangles", mesh.n_vertices(), mesh.n_elements());
    for (name, region) in [
        ("closure", Region::Closure),
        ("domain boundary", Region::DomainBoundary),
        ("skeleton", Region::Skeleton),
        ("skeleton interior", Region::SkeletonInterior),
        ("subdomain 12 interior", Region::SubInterior(12)),
        ("subdomain 12 boundary", Region::SubBoundary(12)),
    ] {
        println!("{name:>22}: {} vertices", mesh.restriction(region)?.target_size());
    }

    // Φ_H maps coarse nodal values to the skeleton; rows sum to one.
    let phi = basis.phi();
    let worst = (0..phi.nrows()).map(|r| (phi.row(r).sum() - 1.0).abs()).fold(0.0, f64::max);
    println!("coarse basis {}x{}, partition of unity defect {worst:.1e}", phi.nrows(), phi.ncols());
    println!("local basis of subdomain 12: {}x{}", basis.local(12).nrows(), basis.local(12).ncols());

    if let Some(dir) = std::env::args().nth(1) {
        mesh.dump_csv(std::path::Path::new(&dir))?;
        println!("mesh written to {dir}");
    }
    Ok(())
}
