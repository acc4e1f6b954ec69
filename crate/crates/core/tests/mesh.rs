use msdtn::mesh::{build_coarse_basis, build_fine_mesh, build_partition, Region, Restriction, VertexKind};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn subset(mask: &[bool]) -> Restriction {
    let idx = mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k).collect();
    Restriction::new(mask.len(), idx).unwrap()
}

proptest! {
    #[test]
    fn restriction_composition_identity(masks in (1usize..40).prop_flat_map(|n| {
        (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
    })) {
        let (a, b) = (subset(&masks.0), subset(&masks.1));
        let ab = a.intersection(&b);
        let direct = a.to_dense() * b.to_dense().transpose();
        prop_assert_eq!(&a.relative_to(&b).to_dense(), &direct);
        let through = a.relative_to(&ab).compose(&ab.relative_to(&b));
        prop_assert_eq!(through.to_dense(), direct);
    }

    #[test]
    fn named_regions_compose(n in 1usize..4, cells in 1usize..4, i in 0usize..16, j in 0usize..16, pick in 0usize..7, pick2 in 0usize..7) {
        let part = build_partition(2, n).unwrap();
        let mesh = build_fine_mesh(&part, cells).unwrap();
        let ns = n * n;
        let region = |p: usize, s: usize| match p {
            0 => Region::Closure,
            1 => Region::Domain,
            2 => Region::DomainBoundary,
            3 => Region::Skeleton,
            4 => Region::SkeletonInterior,
            5 => Region::SubBoundary(s % ns),
            _ => Region::SubClosure(s % ns),
        };
        let a = mesh.restriction(region(pick, i)).unwrap();
        let b = mesh.restriction(region(pick2, j)).unwrap();
        let ab = a.intersection(&b);
        let through = a.relative_to(&ab).compose(&ab.relative_to(&b));
        prop_assert_eq!(through, a.relative_to(&b));
    }
}

#[test]
fn local_basis_blocks_satisfy_the_gluing_identity() {
    // R^{∂Ω_i}_Γ Φ_H = Φ_{Hi} R^{∂Ω_i}_H as matrices
    let part = build_partition(2, 5).unwrap();
    let mesh = build_fine_mesh(&part, 18).unwrap();
    let basis = build_coarse_basis(&part, &mesh).unwrap();
    for i in 0..part.n_subdomains() {
        let rows = mesh.restriction(Region::SubBoundary(i)).unwrap().relative_to(basis.skeleton()).to_dense();
        let coarse = part.coarse_restriction_local(i).to_dense();
        assert_eq!(rows * basis.phi(), basis.local(i) * coarse, "subdomain {i}");
    }
}

#[test]
fn skeleton_matches_a_geometric_scan() {
    let part = build_partition(2, 5).unwrap();
    let mesh = build_fine_mesh(&part, 18).unwrap();
    let on_grid_line = |t: f64| ((t * 5.0) - (t * 5.0).round()).abs() < 1e-12;
    let expected: Vec<usize> =
        (0..mesh.n_vertices()).filter(|&k| on_grid_line(mesh.vertex(k)[0]) || on_grid_line(mesh.vertex(k)[1])).collect();
    let skeleton = mesh.restriction(Region::Skeleton).unwrap();
    assert_eq!(skeleton.indices(), expected.as_slice());
    // 6 horizontal and 6 vertical lines of 91 vertices, 36 crossings
    assert_eq!(expected.len(), 12 * 91 - 36);
}

#[test]
fn skeleton_vertices_belong_to_every_adjacent_subdomain() {
    let part = build_partition(2, 3).unwrap();
    let mesh = build_fine_mesh(&part, 4).unwrap();
    let boxes = part.subdomain_boxes();
    for k in 0..mesh.n_vertices() {
        if mesh.vertex_kind(k) == VertexKind::Interior {
            continue;
        }
        let p = mesh.vertex(k);
        for (i, b) in boxes.iter().enumerate() {
            let touches = (0..2).all(|d| p[d] >= b.lo[d] - 1e-12 && p[d] <= b.hi[d] + 1e-12);
            let listed = mesh.restriction(Region::SubBoundary(i)).unwrap().indices().contains(&k);
            assert_eq!(touches, listed, "vertex {k} and subdomain {i}");
        }
    }
}

#[test]
fn coarse_basis_is_a_partition_of_unity_with_nodal_property() {
    for (dim, n, cells) in [(1, 5, 40), (2, 5, 18), (2, 2, 3)] {
        let part = build_partition(dim, n).unwrap();
        let mesh = build_fine_mesh(&part, cells).unwrap();
        let basis = build_coarse_basis(&part, &mesh).unwrap();
        let phi = basis.phi();
        let ones = phi * nalgebra::DVector::from_element(phi.ncols(), 1.0);
        assert!(ones.iter().all(|s| (s - 1.0).abs() <= 1e-14));
        let pos = basis.skeleton().inverse_map();
        let mut at_nodes = DMatrix::zeros(phi.ncols(), phi.ncols());
        for (alpha, node) in part.coarse_nodes().iter().enumerate() {
            let k = (0..mesh.n_vertices()).find(|&k| mesh.vertex(k) == node.position).unwrap();
            at_nodes.set_row(alpha, &phi.row(pos[k].unwrap()));
        }
        assert_eq!(at_nodes, DMatrix::identity(phi.ncols(), phi.ncols()));
    }
}

#[test]
fn preset_mesh_sizes() {
    let part = build_partition(1, 5).unwrap();
    assert_eq!(build_fine_mesh(&part, 40).unwrap().n_vertices(), 201);
    let single = build_partition(2, 1).unwrap();
    let mesh = build_fine_mesh(&single, 18).unwrap();
    assert_eq!((mesh.n_elements(), mesh.n_vertices()), (648, 361));
}
