//! Structured tensor-product meshes and Taylor-Hood (Q2/Q1) function spaces.
//!
//! Vertices, nodes and cells are numbered lexicographically with the x index
//! running fastest. Cells are axis-aligned boxes of identical size, which the
//! assembly routines rely on to reuse a single reference element matrix.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// A point in up to three dimensions; unused trailing coordinates are zero.
pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    Left,
    Right,
    Top,
    Bottom,
    Wall,
    Compression,
}

impl BoundaryTag {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Left => "left",
            BoundaryTag::Right => "right",
            BoundaryTag::Top => "top",
            BoundaryTag::Bottom => "bottom",
            BoundaryTag::Wall => "wall",
            BoundaryTag::Compression => "compression",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// Two-dimensional Mandel consolidation benchmark.
    Mandel,
    /// Three-dimensional footing (compressed block) problem.
    Footing,
}

impl ProblemKind {
    pub fn spatial_dim(self) -> usize {
        match self {
            ProblemKind::Mandel => 2,
            ProblemKind::Footing => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Mandel => "mandel",
            ProblemKind::Footing => "footing",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mandel" => Ok(ProblemKind::Mandel),
            "footing" => Ok(ProblemKind::Footing),
            other => Err(Error::invalid(format!("unknown problem kind '{other}'"))),
        }
    }
}

/// An exterior cell face. `local_face = 2 * axis + side`, with side 0 at the
/// lower coordinate and 1 at the upper one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFacet {
    pub cell: usize,
    pub local_face: usize,
    pub tag: Option<BoundaryTag>,
}

impl BoundaryFacet {
    pub fn axis(&self) -> usize {
        self.local_face / 2
    }

    pub fn is_upper(&self) -> bool {
        self.local_face % 2 == 1
    }
}

#[derive(Debug, Clone)]
pub struct StructuredMesh {
    pub spatial_dim: usize,
    pub origin: Point,
    pub extent: Point,
    /// Cell counts per axis; entries beyond `spatial_dim` are 1.
    pub cells_per_axis: [usize; 3],
    pub vertex_coords: Vec<Point>,
    /// `2^d` vertex indices per cell in lexicographic local order.
    pub cell_connectivity: Vec<Vec<usize>>,
    pub boundary_facets: Vec<BoundaryFacet>,
}

pub fn build_structured_mesh(origin: &[f64], extent: &[f64], cells_per_axis: &[usize]) -> Result<StructuredMesh> {
    let dim = origin.len();
    if !(2..=3).contains(&dim) {
        return Err(Error::invalid(format!("spatial dimension must be 2 or 3, got {dim}")));
    }
    if extent.len() != dim || cells_per_axis.len() != dim {
        return Err(Error::invalid("origin, extent and cell counts must have equal length"));
    }
    if let Some(e) = extent.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid(format!("extent must be positive, got {e}")));
    }
    if cells_per_axis.contains(&0) {
        return Err(Error::invalid("cell counts must be at least 1"));
    }

    let mut o = [0.0; 3];
    let mut e = [0.0; 3];
    let mut n = [1usize; 3];
    o[..dim].copy_from_slice(origin);
    e[..dim].copy_from_slice(extent);
    n[..dim].copy_from_slice(cells_per_axis);

    let verts = [n[0] + 1, n[1] + 1, if dim == 3 { n[2] + 1 } else { 1 }];
    let mut vertex_coords = Vec::with_capacity(verts.iter().product());
    for k in 0..verts[2] {
        for j in 0..verts[1] {
            for i in 0..verts[0] {
                let idx = [i, j, k];
                let mut p = [0.0; 3];
                for a in 0..dim {
                    p[a] = o[a] + e[a] * idx[a] as f64 / n[a] as f64;
                }
                vertex_coords.push(p);
            }
        }
    }

    let num_cells: usize = n.iter().product();
    let mut cell_connectivity = Vec::with_capacity(num_cells);
    let mut boundary_facets = Vec::new();
    for c in 0..num_cells {
        let ci = unflatten(c, &n);
        let corners = 1usize << dim;
        let conn = (0..corners)
            .map(|l| {
                let mut v = ci;
                for (a, va) in v.iter_mut().enumerate().take(dim) {
                    *va += (l >> a) & 1;
                }
                flatten(&v, &verts)
            })
            .collect();
        cell_connectivity.push(conn);
        for a in 0..dim {
            if ci[a] == 0 {
                boundary_facets.push(BoundaryFacet { cell: c, local_face: 2 * a, tag: None });
            }
            if ci[a] + 1 == n[a] {
                boundary_facets.push(BoundaryFacet { cell: c, local_face: 2 * a + 1, tag: None });
            }
        }
    }

    Ok(StructuredMesh {
        spatial_dim: dim,
        origin: o,
        extent: e,
        cells_per_axis: n,
        vertex_coords,
        cell_connectivity,
        boundary_facets,
    })
}

/// Assigns a boundary tag to every exterior facet.
///
/// Mandel (2D): x-min Left, x-max Right, y-min Bottom, y-max Top.
/// Footing (3D): z-min Bottom, the four lateral faces Wall, and the z-max face
/// split into the centered half-side square Compression and the remaining Top.
pub fn tag_boundaries(mut mesh: StructuredMesh, kind: ProblemKind) -> Result<StructuredMesh> {
    if mesh.spatial_dim != kind.spatial_dim() {
        return Err(Error::invalid(format!(
            "{} problem needs a {}D mesh, got {}D",
            kind.name(),
            kind.spatial_dim(),
            mesh.spatial_dim
        )));
    }
    if kind == ProblemKind::Footing && (mesh.cells_per_axis[0] % 4 != 0 || mesh.cells_per_axis[1] % 4 != 0) {
        log::warn!("footing compression patch does not align with facets unless x/y cell counts are divisible by 4");
    }
    let center = [
        mesh.origin[0] + 0.5 * mesh.extent[0],
        mesh.origin[1] + 0.5 * mesh.extent[1],
    ];
    let half_patch = [0.25 * mesh.extent[0], 0.25 * mesh.extent[1]];
    for i in 0..mesh.boundary_facets.len() {
        let facet = mesh.boundary_facets[i];
        let tag = match (kind, facet.axis(), facet.is_upper()) {
            (ProblemKind::Mandel, 0, false) => BoundaryTag::Left,
            (ProblemKind::Mandel, 0, true) => BoundaryTag::Right,
            (ProblemKind::Mandel, _, false) => BoundaryTag::Bottom,
            (ProblemKind::Mandel, _, true) => BoundaryTag::Top,
            (ProblemKind::Footing, 2, false) => BoundaryTag::Bottom,
            (ProblemKind::Footing, 2, true) => {
                let c = mesh.facet_centroid(&facet);
                if (c[0] - center[0]).abs() < half_patch[0] && (c[1] - center[1]).abs() < half_patch[1] {
                    BoundaryTag::Compression
                } else {
                    BoundaryTag::Top
                }
            }
            (ProblemKind::Footing, _, _) => BoundaryTag::Wall,
        };
        mesh.boundary_facets[i].tag = Some(tag);
    }
    Ok(mesh)
}

impl StructuredMesh {
    pub fn num_cells(&self) -> usize {
        self.cell_connectivity.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_coords.len()
    }

    /// Edge lengths of every cell.
    pub fn cell_size(&self) -> Point {
        let mut h = [0.0; 3];
        for (a, ha) in h.iter_mut().enumerate().take(self.spatial_dim) {
            *ha = self.extent[a] / self.cells_per_axis[a] as f64;
        }
        h
    }

    pub fn cell_multi_index(&self, cell: usize) -> [usize; 3] {
        unflatten(cell, &self.cells_per_axis)
    }

    pub fn cell_origin(&self, cell: usize) -> Point {
        let ci = self.cell_multi_index(cell);
        let h = self.cell_size();
        let mut p = [0.0; 3];
        for a in 0..self.spatial_dim {
            p[a] = self.origin[a] + ci[a] as f64 * h[a];
        }
        p
    }

    pub fn facet_centroid(&self, facet: &BoundaryFacet) -> Point {
        let h = self.cell_size();
        let mut p = self.cell_origin(facet.cell);
        for a in 0..self.spatial_dim {
            if a == facet.axis() {
                if facet.is_upper() {
                    p[a] += h[a];
                }
            } else {
                p[a] += 0.5 * h[a];
            }
        }
        p
    }

    /// Length (2D) or area (3D) of a facet.
    pub fn facet_measure(&self, facet: &BoundaryFacet) -> f64 {
        let h = self.cell_size();
        (0..self.spatial_dim).filter(|&a| a != facet.axis()).map(|a| h[a]).product()
    }

    pub fn facets_with_tag(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryFacet> + '_ {
        self.boundary_facets.iter().filter(move |f| f.tag == Some(tag))
    }

    pub fn has_tag(&self, tag: BoundaryTag) -> bool {
        self.facets_with_tag(tag).next().is_some()
    }

    pub fn tag_measure(&self, tag: BoundaryTag) -> f64 {
        self.facets_with_tag(tag).map(|f| self.facet_measure(f)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct TaylorHoodSpace {
    pub mesh: StructuredMesh,
    /// Displacement dof count: `d` components per Q2 node.
    pub n_u: usize,
    /// Pressure dof count: one per Q1 node.
    pub n_p: usize,
    /// Q2 node indices per cell (`3^d`, lexicographic local order).
    pub u_dof_map: Vec<Vec<usize>>,
    /// Q1 node indices per cell (`2^d`, lexicographic local order).
    pub p_dof_map: Vec<Vec<usize>>,
    pub u_node_coords: Vec<Point>,
    pub p_node_coords: Vec<Point>,
}

pub fn build_taylor_hood_space(mesh: StructuredMesh) -> TaylorHoodSpace {
    let dim = mesh.spatial_dim;
    let n = mesh.cells_per_axis;
    let mut q2 = [1usize; 3];
    let mut q1 = [1usize; 3];
    for a in 0..dim {
        q2[a] = 2 * n[a] + 1;
        q1[a] = n[a] + 1;
    }
    let h = mesh.cell_size();
    let node_coords = |dims: &[usize; 3], spacing: f64| -> Vec<Point> {
        let total: usize = dims.iter().product();
        (0..total)
            .map(|id| {
                let idx = unflatten(id, dims);
                let mut p = [0.0; 3];
                for a in 0..dim {
                    p[a] = mesh.origin[a] + idx[a] as f64 * h[a] * spacing;
                }
                p
            })
            .collect()
    };
    let u_node_coords = node_coords(&q2, 0.5);
    let p_node_coords = node_coords(&q1, 1.0);

    let mut u_dof_map = Vec::with_capacity(mesh.num_cells());
    let mut p_dof_map = Vec::with_capacity(mesh.num_cells());
    let pow3 = 3usize.pow(dim as u32);
    let pow2 = 1usize << dim;
    for c in 0..mesh.num_cells() {
        let ci = unflatten(c, &n);
        u_dof_map.push(
            (0..pow3)
                .map(|l| {
                    let li = local_digits(l, 3);
                    let mut g = [0usize; 3];
                    for a in 0..dim {
                        g[a] = 2 * ci[a] + li[a];
                    }
                    flatten(&g, &q2)
                })
                .collect(),
        );
        p_dof_map.push(
            (0..pow2)
                .map(|l| {
                    let li = local_digits(l, 2);
                    let mut g = [0usize; 3];
                    for a in 0..dim {
                        g[a] = ci[a] + li[a];
                    }
                    flatten(&g, &q1)
                })
                .collect(),
        );
    }

    TaylorHoodSpace {
        n_u: dim * u_node_coords.len(),
        n_p: p_node_coords.len(),
        mesh,
        u_dof_map,
        p_dof_map,
        u_node_coords,
        p_node_coords,
    }
}

impl TaylorHoodSpace {
    pub fn dim(&self) -> usize {
        self.mesh.spatial_dim
    }

    /// Global displacement dof of component `comp` at Q2 node `node`.
    pub fn u_dof(&self, node: usize, comp: usize) -> usize {
        node * self.dim() + comp
    }

    /// Q2 nodes lying on facets with the given tag.
    pub fn u_nodes_on(&self, tag: BoundaryTag) -> BTreeSet<usize> {
        self.nodes_on(tag, 3, &self.u_dof_map)
    }

    /// Q1 nodes lying on facets with the given tag.
    pub fn p_nodes_on(&self, tag: BoundaryTag) -> BTreeSet<usize> {
        self.nodes_on(tag, 2, &self.p_dof_map)
    }

    fn nodes_on(&self, tag: BoundaryTag, per_axis: usize, map: &[Vec<usize>]) -> BTreeSet<usize> {
        let mut nodes = BTreeSet::new();
        for f in self.mesh.facets_with_tag(tag) {
            for l in facet_local_nodes(self.dim(), per_axis, f.axis(), f.is_upper()) {
                nodes.insert(map[f.cell][l]);
            }
        }
        nodes
    }
}

/// Local node indices (tensor layout with `per_axis` nodes per axis) that lie on a cell face.
pub(crate) fn facet_local_nodes(dim: usize, per_axis: usize, axis: usize, upper: bool) -> Vec<usize> {
    let fixed = if upper { per_axis - 1 } else { 0 };
    (0..per_axis.pow(dim as u32))
        .filter(|&l| local_digits(l, per_axis)[axis] == fixed)
        .collect()
}

pub(crate) fn local_digits(mut l: usize, base: usize) -> [usize; 3] {
    let mut d = [0usize; 3];
    for di in d.iter_mut() {
        *di = l % base;
        l /= base;
    }
    d
}

fn unflatten(mut id: usize, dims: &[usize; 3]) -> [usize; 3] {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        idx[a] = id % dims[a];
        id /= dims[a];
    }
    idx
}

fn flatten(idx: &[usize; 3], dims: &[usize; 3]) -> usize {
    idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mandel(nx: usize, ny: usize) -> StructuredMesh {
        let m = build_structured_mesh(&[0.0, 0.0], &[100.0, 20.0], &[nx, ny]).unwrap();
        tag_boundaries(m, ProblemKind::Mandel).unwrap()
    }

    #[test]
    fn single_cell_mesh() {
        let m = build_structured_mesh(&[0.0, 0.0], &[1.0, 1.0], &[1, 1]).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_cells(), 1);
        assert_eq!(m.boundary_facets.len(), 4);
        let m = tag_boundaries(m, ProblemKind::Mandel).unwrap();
        for tag in [BoundaryTag::Left, BoundaryTag::Right, BoundaryTag::Top, BoundaryTag::Bottom] {
            assert_eq!(m.facets_with_tag(tag).count(), 1, "{tag:?}");
        }
    }

    #[test]
    fn vertex_counts() {
        let m = build_structured_mesh(&[0.0, 0.0], &[100.0, 20.0], &[80, 16]).unwrap();
        assert_eq!(m.num_vertices(), 1377);
        let m = build_structured_mesh(&[-32.0, -32.0, 0.0], &[64.0, 64.0, 64.0], &[16, 16, 16]).unwrap();
        assert_eq!(m.num_vertices(), 4913);
        assert_eq!(m.num_cells(), 4096);
    }

    #[test]
    fn invalid_arguments() {
        assert!(build_structured_mesh(&[0.0, 0.0], &[0.0, 1.0], &[1, 1]).is_err());
        assert!(build_structured_mesh(&[0.0, 0.0], &[-1.0, 1.0], &[1, 1]).is_err());
        assert!(build_structured_mesh(&[0.0, 0.0], &[1.0, 1.0], &[0, 1]).is_err());
        assert!(build_structured_mesh(&[0.0], &[1.0], &[1]).is_err());
        let m = build_structured_mesh(&[0.0, 0.0], &[1.0, 1.0], &[1, 1]).unwrap();
        assert!(tag_boundaries(m, ProblemKind::Footing).is_err());
    }

    #[test]
    fn mandel_axis_counts() {
        let m = mandel(80, 16);
        assert_eq!(m.facets_with_tag(BoundaryTag::Bottom).count(), 80);
        assert_eq!(m.facets_with_tag(BoundaryTag::Left).count(), 16);
        assert!(m.boundary_facets.iter().all(|f| f.tag.is_some()));
    }

    #[test]
    fn footing_compression_patch_area() {
        let m = build_structured_mesh(&[-32.0, -32.0, 0.0], &[64.0, 64.0, 64.0], &[16, 16, 16]).unwrap();
        let m = tag_boundaries(m, ProblemKind::Footing).unwrap();
        assert!((m.tag_measure(BoundaryTag::Compression) - 32.0 * 32.0).abs() < 1e-9);
        assert!((m.tag_measure(BoundaryTag::Top) - (64.0 * 64.0 - 32.0 * 32.0)).abs() < 1e-9);
        assert!((m.tag_measure(BoundaryTag::Wall) - 4.0 * 64.0 * 64.0).abs() < 1e-9);
        for f in m.facets_with_tag(BoundaryTag::Compression) {
            let c = m.facet_centroid(f);
            assert!(c[0].abs() < 16.0 && c[1].abs() < 16.0 && c[2] == 64.0);
        }
    }

    #[test]
    fn taylor_hood_counts() {
        let s = build_taylor_hood_space(mandel(80, 16));
        assert_eq!((s.n_u, s.n_p), (10_626, 1_377));
        let s = build_taylor_hood_space(mandel(1, 1));
        assert_eq!((s.n_u, s.n_p), (18, 4));
        let m = build_structured_mesh(&[-32.0, -32.0, 0.0], &[64.0, 64.0, 64.0], &[16, 16, 16]).unwrap();
        let s = build_taylor_hood_space(m);
        assert_eq!((s.n_u, s.n_p), (107_811, 4_913));
    }

    #[test]
    fn dof_count_sweep_and_incidence() {
        for nx in 1..=8 {
            for ny in 1..=8 {
                let m = build_structured_mesh(&[0.0, 0.0], &[1.0, 2.0], &[nx, ny]).unwrap();
                let s = build_taylor_hood_space(m);
                assert_eq!(s.n_u, 2 * (2 * nx + 1) * (2 * ny + 1));
                assert_eq!(s.n_p, (nx + 1) * (ny + 1));
                // Q1 node incidence equals the number of adjacent cells.
                let mut count = vec![0usize; s.n_p];
                s.p_dof_map.iter().flatten().for_each(|&n| count[n] += 1);
                for (node, &c) in count.iter().enumerate() {
                    let (i, j) = (node % (nx + 1), node / (nx + 1));
                    let cx = if i == 0 || i == nx { 1 } else { 2 };
                    let cy = if j == 0 || j == ny { 1 } else { 2 };
                    assert_eq!(c, cx * cy);
                }
                let mut ucount = vec![0usize; s.n_u / 2];
                s.u_dof_map.iter().flatten().for_each(|&n| ucount[n] += 1);
                assert!(ucount.iter().all(|&c| c >= 1));
            }
        }
        for n in 1..=3 {
            let m = build_structured_mesh(&[0.0; 3], &[1.0; 3], &[n, n + 1, 2]).unwrap();
            let s = build_taylor_hood_space(m);
            assert_eq!(s.n_u, 3 * (2 * n + 1) * (2 * n + 3) * 5);
            assert_eq!(s.n_p, (n + 1) * (n + 2) * 3);
        }
    }

    #[test]
    fn pressure_nodes_coincide_with_displacement_nodes() {
        let s = build_taylor_hood_space(mandel(5, 3));
        for (c, pnodes) in s.p_dof_map.iter().enumerate() {
            for (l, &pn) in pnodes.iter().enumerate() {
                let d = local_digits(l, 2);
                let ul = 2 * d[0] + 3 * 2 * d[1];
                assert_eq!(s.p_node_coords[pn], s.u_node_coords[s.u_dof_map[c][ul]]);
            }
        }
    }

    #[test]
    fn boundary_measure_matches_box_surface() {
        let m = mandel(7, 3);
        let total: f64 = m.boundary_facets.iter().map(|f| m.facet_measure(f)).sum();
        assert!((total - 240.0).abs() < 1e-9);
        let m = build_structured_mesh(&[0.0; 3], &[1.0, 2.0, 3.0], &[2, 3, 4]).unwrap();
        let total: f64 = m.boundary_facets.iter().map(|f| m.facet_measure(f)).sum();
        assert!((total - 2.0 * (2.0 + 3.0 + 6.0)).abs() < 1e-9);
    }

    #[test]
    fn vertices_inside_box() {
        let m = build_structured_mesh(&[-1.0, 2.0, 0.5], &[2.0, 1.0, 3.0], &[3, 2, 2]).unwrap();
        for v in &m.vertex_coords {
            for a in 0..3 {
                assert!(v[a] >= m.origin[a] - 1e-12 && v[a] <= m.origin[a] + m.extent[a] + 1e-12);
            }
        }
    }
}
