//! Coarse partitions of the unit interval / unit square, conforming fine
//! meshes, boolean restriction operators and the coarse hat basis on the
//! skeleton.
//!
//! Fine vertices are numbered lexicographically (x fastest). Every index set
//! derived from the mesh is sorted by global vertex index, except the local
//! coarse-node sets of a subdomain which follow the canonical order
//! `[left, right]` (1D) or counterclockwise from the lower-left corner (2D).

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A point in the plane; 1D meshes keep `y = 0`.
pub type Point = [f64; 2];

/// An axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBox {
    pub lo: Point,
    pub hi: Point,
}

impl AxisBox {
    pub fn contains_open(&self, p: Point, dim: usize) -> bool {
        (0..dim).all(|k| p[k] > self.lo[k] && p[k] < self.hi[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseNode {
    pub position: Point,
    pub on_boundary: bool,
}

/// Coarse edge `Γ_ij` given by its two end nodes. In 1D the edges degenerate
/// to single points and `a == b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkeletonEdge {
    pub a: usize,
    pub b: usize,
}

/// Nonoverlapping rectangular partition of `(0,1)^dim` into `n^dim` equal boxes.
#[derive(Debug, Clone)]
pub struct CoarsePartition {
    dim: usize,
    n_sub: usize,
    boxes: Vec<AxisBox>,
    edges: Vec<SkeletonEdge>,
    nodes: Vec<CoarseNode>,
}

/// Builds the coarse partition with `n_sub_per_axis` subdomains per axis.
pub fn build_partition(dim: usize, n_sub_per_axis: usize) -> Result<CoarsePartition> {
    if dim != 1 && dim != 2 {
        return Err(Error::InvalidInput(format!("dimension must be 1 or 2, got {dim}")));
    }
    if n_sub_per_axis == 0 {
        return Err(Error::InvalidInput("need at least one subdomain per axis".into()));
    }
    let n = n_sub_per_axis;
    let coord = |k: usize| k as f64 / n as f64;

    let mut boxes = Vec::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    if dim == 1 {
        for k in 0..n {
            boxes.push(AxisBox { lo: [coord(k), 0.0], hi: [coord(k + 1), 0.0] });
        }
        for k in 0..=n {
            nodes.push(CoarseNode { position: [coord(k), 0.0], on_boundary: k == 0 || k == n });
            edges.push(SkeletonEdge { a: k, b: k });
        }
    } else {
        for jy in 0..n {
            for jx in 0..n {
                boxes.push(AxisBox {
                    lo: [coord(jx), coord(jy)],
                    hi: [coord(jx + 1), coord(jy + 1)],
                });
            }
        }
        let id = |ix: usize, iy: usize| iy * (n + 1) + ix;
        for iy in 0..=n {
            for ix in 0..=n {
                let on_boundary = ix == 0 || iy == 0 || ix == n || iy == n;
                nodes.push(CoarseNode { position: [coord(ix), coord(iy)], on_boundary });
            }
        }
        for iy in 0..=n {
            for ix in 0..n {
                edges.push(SkeletonEdge { a: id(ix, iy), b: id(ix + 1, iy) });
            }
        }
        for ix in 0..=n {
            for iy in 0..n {
                edges.push(SkeletonEdge { a: id(ix, iy), b: id(ix, iy + 1) });
            }
        }
    }
    Ok(CoarsePartition { dim, n_sub: n, boxes, edges, nodes })
}

impl CoarsePartition {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sub_per_axis(&self) -> usize {
        self.n_sub
    }

    pub fn n_subdomains(&self) -> usize {
        self.boxes.len()
    }

    pub fn subdomain_boxes(&self) -> &[AxisBox] {
        &self.boxes
    }

    pub fn skeleton_edges(&self) -> &[SkeletonEdge] {
        &self.edges
    }

    pub fn coarse_nodes(&self) -> &[CoarseNode] {
        &self.nodes
    }

    pub fn n_interior_coarse_nodes(&self) -> usize {
        self.nodes.iter().filter(|n| !n.on_boundary).count()
    }

    /// Global coarse node indices of subdomain `i` in canonical local order.
    pub fn local_coarse_nodes(&self, i: usize) -> Vec<usize> {
        let n = self.n_sub;
        if self.dim == 1 {
            vec![i, i + 1]
        } else {
            let (jx, jy) = (i % n, i / n);
            let id = |ix: usize, iy: usize| iy * (n + 1) + ix;
            vec![id(jx, jy), id(jx + 1, jy), id(jx + 1, jy + 1), id(jx, jy + 1)]
        }
    }

    /// Coarse restriction `ℛ^{∂Ω_i}_Γ` (canonical local order).
    pub fn coarse_restriction_local(&self, i: usize) -> Restriction {
        Restriction { source_size: self.nodes.len(), indices: self.local_coarse_nodes(i) }
    }

    /// Coarse restriction onto the nodes lying on `∂Ω`.
    pub fn coarse_restriction_boundary(&self) -> Restriction {
        let indices = (0..self.nodes.len()).filter(|&k| self.nodes[k].on_boundary).collect();
        Restriction { source_size: self.nodes.len(), indices }
    }

    /// Coarse restriction onto the nodes in the interior of `Ω`.
    pub fn coarse_restriction_interior(&self) -> Restriction {
        let indices = (0..self.nodes.len()).filter(|&k| !self.nodes[k].on_boundary).collect();
        Restriction { source_size: self.nodes.len(), indices }
    }
}

/// Classification of a fine vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    /// Strictly inside a subdomain.
    Interior,
    /// On the skeleton but not on `∂Ω`.
    Skeleton,
    /// On `∂Ω`.
    Boundary,
}

impl VertexKind {
    fn label(self) -> &'static str {
        match self {
            VertexKind::Interior => "interior",
            VertexKind::Skeleton => "skeleton",
            VertexKind::Boundary => "boundary",
        }
    }
}

/// Structured P1 mesh conforming with a [`CoarsePartition`]: a uniform grid in
/// 1D, a right-diagonal triangulation of a uniform quad grid in 2D.
#[derive(Debug, Clone)]
pub struct FineMesh {
    dim: usize,
    n_sub: usize,
    cells_per_sub: usize,
    vertices: Vec<Point>,
    grid: Vec<[usize; 2]>,
    elements: Vec<[usize; 3]>,
    owner: Vec<usize>,
    kinds: Vec<VertexKind>,
}

/// Builds the fine mesh with `fine_cells_per_subdomain` cells per subdomain
/// and axis (each 2D quad cell is split into two triangles).
pub fn build_fine_mesh(partition: &CoarsePartition, fine_cells_per_subdomain: usize) -> Result<FineMesh> {
    if fine_cells_per_subdomain == 0 {
        return Err(Error::InvalidInput("need at least one fine cell per subdomain".into()));
    }
    let dim = partition.dim;
    let n = partition.n_sub;
    let m = fine_cells_per_subdomain;
    let cells = n * m;
    let coord = |k: usize| k as f64 / cells as f64;
    let kind = |ix: usize, iy: usize| {
        let on_dom_boundary =
            ix == 0 || ix == cells || (dim == 2 && (iy == 0 || iy == cells));
        let on_skeleton = ix % m == 0 || (dim == 2 && iy % m == 0);
        if on_dom_boundary {
            VertexKind::Boundary
        } else if on_skeleton {
            VertexKind::Skeleton
        } else {
            VertexKind::Interior
        }
    };

    let mut vertices = Vec::new();
    let mut grid = Vec::new();
    let mut kinds = Vec::new();
    let mut elements = Vec::new();
    let mut owner = Vec::new();
    if dim == 1 {
        for ix in 0..=cells {
            vertices.push([coord(ix), 0.0]);
            grid.push([ix, 0]);
            kinds.push(kind(ix, 0));
        }
        for c in 0..cells {
            elements.push([c, c + 1, usize::MAX]);
            owner.push(c / m);
        }
    } else {
        let id = |ix: usize, iy: usize| iy * (cells + 1) + ix;
        for iy in 0..=cells {
            for ix in 0..=cells {
                vertices.push([coord(ix), coord(iy)]);
                grid.push([ix, iy]);
                kinds.push(kind(ix, iy));
            }
        }
        for cy in 0..cells {
            for cx in 0..cells {
                let sub = (cy / m) * n + cx / m;
                let (v00, v10, v11, v01) =
                    (id(cx, cy), id(cx + 1, cy), id(cx + 1, cy + 1), id(cx, cy + 1));
                elements.push([v00, v10, v11]);
                owner.push(sub);
                elements.push([v00, v11, v01]);
                owner.push(sub);
            }
        }
    }
    Ok(FineMesh { dim, n_sub: n, cells_per_sub: m, vertices, grid, elements, owner, kinds })
}

/// Dof regions of a fine mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// All vertices, `Ω̄`.
    Closure,
    /// Vertices not on `∂Ω`.
    Domain,
    /// Vertices on `∂Ω`.
    DomainBoundary,
    /// Vertices on the skeleton `Γ` (which contains `∂Ω`).
    Skeleton,
    /// `Γ ∩ Ω`.
    SkeletonInterior,
    /// Open subdomain `Ω_i`.
    SubInterior(usize),
    /// Subdomain boundary `∂Ω_i`.
    SubBoundary(usize),
    /// Closed subdomain `Ω̄_i`.
    SubClosure(usize),
}

impl FineMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_subdomains(&self) -> usize {
        self.n_sub.pow(self.dim as u32)
    }

    pub fn n_sub_per_axis(&self) -> usize {
        self.n_sub
    }

    /// Row sums of the P1 mass matrix (element measure shared equally).
    pub fn lumped_weights(&self) -> Vec<f64> {
        let nv = self.dim + 1;
        let mut w = vec![0.0; self.vertices.len()];
        for el in &self.elements {
            let p: Vec<Point> = el[..nv].iter().map(|&v| self.vertices[v]).collect();
            let measure = if self.dim == 1 {
                p[1][0] - p[0][0]
            } else {
                0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
            };
            for &v in &el[..nv] {
                w[v] += measure / nv as f64;
            }
        }
        w
    }

    pub fn cells_per_subdomain(&self) -> usize {
        self.cells_per_sub
    }

    pub fn vertex(&self, k: usize) -> Point {
        self.vertices[k]
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex_kind(&self, k: usize) -> VertexKind {
        self.kinds[k]
    }

    /// Vertex indices of element `e` (2 in 1D, 3 in 2D).
    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e][..self.dim + 1]
    }

    pub fn element_owner(&self, e: usize) -> usize {
        self.owner[e]
    }

    /// Elements owned by subdomain `i`, ascending.
    pub fn subdomain_elements(&self, i: usize) -> Vec<usize> {
        (0..self.elements.len()).filter(|&e| self.owner[e] == i).collect()
    }

    /// Subdomain grid-index range `[lo, hi]` per axis.
    fn sub_range(&self, i: usize) -> [[usize; 2]; 2] {
        let m = self.cells_per_sub;
        let n = self.n_sub;
        let (jx, jy) = if self.dim == 1 { (i, 0) } else { (i % n, i / n) };
        [[jx * m, (jx + 1) * m], [jy * m, (jy + 1) * m]]
    }

    fn in_region(&self, k: usize, region: Region) -> bool {
        let [ix, iy] = self.grid[k];
        let dim = self.dim;
        let check_sub = |i: usize, closed: bool, boundary_only: bool| {
            let r = self.sub_range(i);
            let inside_closed = (0..dim).all(|a| {
                let g = if a == 0 { ix } else { iy };
                g >= r[a][0] && g <= r[a][1]
            });
            let on_edge = (0..dim).any(|a| {
                let g = if a == 0 { ix } else { iy };
                g == r[a][0] || g == r[a][1]
            });
            if boundary_only {
                inside_closed && on_edge
            } else if closed {
                inside_closed
            } else {
                inside_closed && !on_edge
            }
        };
        match region {
            Region::Closure => true,
            Region::Domain => self.kinds[k] != VertexKind::Boundary,
            Region::DomainBoundary => self.kinds[k] == VertexKind::Boundary,
            Region::Skeleton => self.kinds[k] != VertexKind::Interior,
            Region::SkeletonInterior => self.kinds[k] == VertexKind::Skeleton,
            Region::SubInterior(i) => check_sub(i, false, false),
            Region::SubBoundary(i) => check_sub(i, true, true),
            Region::SubClosure(i) => check_sub(i, true, false),
        }
    }

    /// Boolean restriction `R_ω` from `Ω̄` onto `region`, ascending order.
    pub fn restriction(&self, region: Region) -> Result<Restriction> {
        match region {
            Region::SubInterior(i) | Region::SubBoundary(i) | Region::SubClosure(i)
                if i >= self.n_subdomains() =>
            {
                return Err(Error::InvalidInput(format!("subdomain {i} out of range")));
            }
            _ => {}
        }
        let indices = (0..self.vertices.len()).filter(|&k| self.in_region(k, region)).collect();
        Ok(Restriction { source_size: self.vertices.len(), indices })
    }

    /// Writes `vertices.csv` and `elements.csv` into `dir`.
    pub fn dump_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut v = fs::File::create(dir.join("vertices.csv"))?;
        writeln!(v, "index,x,y,kind")?;
        for (k, p) in self.vertices.iter().enumerate() {
            writeln!(v, "{k},{},{},{}", p[0], p[1], self.kinds[k].label())?;
        }
        let mut e = fs::File::create(dir.join("elements.csv"))?;
        if self.dim == 1 {
            writeln!(e, "index,v0,v1,owner")?;
        } else {
            writeln!(e, "index,v0,v1,v2,owner")?;
        }
        for idx in 0..self.elements.len() {
            let verts: Vec<String> = self.element(idx).iter().map(|v| v.to_string()).collect();
            writeln!(e, "{idx},{},{}", verts.join(","), self.owner[idx])?;
        }
        Ok(())
    }
}

/// Boolean restriction matrix stored by its row indices: row `k` picks
/// source entry `indices[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Restriction {
    source_size: usize,
    indices: Vec<usize>,
}

impl Restriction {
    pub fn new(source_size: usize, indices: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; source_size];
        for &j in &indices {
            if j >= source_size {
                return Err(Error::InvalidInput(format!("index {j} outside source of size {source_size}")));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidInput(format!("duplicate index {j}")));
            }
        }
        Ok(Restriction { source_size, indices })
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn target_size(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `R v`.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.source_size);
        self.indices.iter().map(|&j| v[j]).collect()
    }

    /// `Rᵀ v`.
    pub fn extend(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.source_size];
        self.extend_add(v, &mut out);
        out
    }

    /// `out += Rᵀ v`.
    pub fn extend_add(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.indices.len());
        for (&j, &x) in self.indices.iter().zip(v) {
            out[j] += x;
        }
    }

    /// Position of every source index inside this restriction.
    pub fn inverse_map(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.source_size];
        for (k, &j) in self.indices.iter().enumerate() {
            map[j] = Some(k);
        }
        map
    }

    /// `R^A_B = R_A R_Bᵀ` with `self = R_A`, `source = R_B`.
    pub fn relative_to(&self, source: &Restriction) -> Transfer {
        assert_eq!(self.source_size, source.source_size, "restrictions over different spaces");
        let pos = source.inverse_map();
        Transfer {
            cols: source.target_size(),
            map: self.indices.iter().map(|&j| pos[j]).collect(),
        }
    }

    /// Index set intersection, ascending.
    pub fn intersection(&self, other: &Restriction) -> Restriction {
        let pos = other.inverse_map();
        let mut indices: Vec<usize> =
            self.indices.iter().copied().filter(|&j| pos[j].is_some()).collect();
        indices.sort_unstable();
        Restriction { source_size: self.source_size, indices }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        Transfer { cols: self.source_size, map: self.indices.iter().map(|&j| Some(j)).collect() }
            .to_dense()
    }
}

/// A boolean matrix with at most one unit entry per row, e.g. `R^A_B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    cols: usize,
    map: Vec<Option<usize>>,
}

impl Transfer {
    pub fn rows(&self) -> usize {
        self.map.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn map(&self) -> &[Option<usize>] {
        &self.map
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.map.iter().map(|m| m.map_or(0.0, |j| v[j])).collect()
    }

    /// `self · other`.
    pub fn compose(&self, other: &Transfer) -> Transfer {
        assert_eq!(self.cols, other.rows());
        Transfer { cols: other.cols, map: self.map.iter().map(|m| m.and_then(|j| other.map[j])).collect() }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.map.len(), self.cols);
        for (k, j) in self.map.iter().enumerate() {
            if let Some(j) = j {
                m[(k, *j)] = 1.0;
            }
        }
        m
    }
}

/// Hat basis of the coarse trace space evaluated at the fine skeleton dofs.
#[derive(Debug, Clone)]
pub struct CoarseBasis {
    skeleton: Restriction,
    phi: DMatrix<f64>,
    local: Vec<DMatrix<f64>>,
}

/// Builds `Φ_H` and its per-subdomain blocks `Φ_{Hi}`.
pub fn build_coarse_basis(partition: &CoarsePartition, mesh: &FineMesh) -> Result<CoarseBasis> {
    if partition.dim != mesh.dim || partition.n_sub != mesh.n_sub {
        return Err(Error::InvalidInput("mesh does not conform with the partition".into()));
    }
    let skeleton = mesh.restriction(Region::Skeleton)?;
    let n = partition.n_sub;
    let m = mesh.cells_per_sub;
    let node_id = |ix: usize, iy: usize| if mesh.dim == 1 { ix } else { iy * (n + 1) + ix };
    let mut phi = DMatrix::zeros(skeleton.target_size(), partition.nodes.len());
    for (row, &k) in skeleton.indices().iter().enumerate() {
        let [gx, gy] = mesh.grid[k];
        let (qx, rx) = (gx / m, gx % m);
        let (qy, ry) = (gy / m, gy % m);
        match (rx == 0, mesh.dim == 1 || ry == 0) {
            (true, true) => phi[(row, node_id(qx, qy))] = 1.0,
            (true, false) => {
                let t = ry as f64 / m as f64;
                phi[(row, node_id(qx, qy))] = 1.0 - t;
                phi[(row, node_id(qx, qy + 1))] = t;
            }
            (false, true) => {
                let t = rx as f64 / m as f64;
                phi[(row, node_id(qx, qy))] = 1.0 - t;
                phi[(row, node_id(qx + 1, qy))] = t;
            }
            (false, false) => unreachable!("vertex {k} is not on the skeleton"),
        }
    }
    let mut local = Vec::with_capacity(partition.n_subdomains());
    for i in 0..partition.n_subdomains() {
        let rows = mesh.restriction(Region::SubBoundary(i))?.relative_to(&skeleton);
        let cols = partition.local_coarse_nodes(i);
        let mut block = DMatrix::zeros(rows.rows(), cols.len());
        for (r, src) in rows.map().iter().enumerate() {
            let src = src.expect("subdomain boundary lies on the skeleton");
            for (c, &alpha) in cols.iter().enumerate() {
                block[(r, c)] = phi[(src, alpha)];
            }
        }
        local.push(block);
    }
    Ok(CoarseBasis { skeleton, phi, local })
}

impl CoarseBasis {
    /// `Φ_H`, rows ordered like the skeleton restriction.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `Φ_{Hi}`: rows ordered like `∂Ω_i`, columns in canonical local order.
    pub fn local(&self, i: usize) -> &DMatrix<f64> {
        &self.local[i]
    }

    pub fn skeleton(&self) -> &Restriction {
        &self.skeleton
    }

    /// `Φ_H g_H` as a skeleton vector.
    pub fn prolong(&self, coarse: &[f64]) -> Vec<f64> {
        let v = &self.phi * nalgebra::DVector::from_column_slice(coarse);
        v.as_slice().to_vec()
    }
}
