//! Full-order operator assembly for the Biot system on a Taylor-Hood space.
//!
//! Block layout (displacement test functions in rows of the u-blocks, pressure
//! test functions in rows of the p-blocks):
//!
//! * `a_uu[i, j] = (σ(φ_j), ∇φ_i)`
//! * `m_pp[i, j] = c (ψ_j, ψ_i)`
//! * `k_pp[i, j] = (K/ν) (∇ψ_j, ∇ψ_i)`
//! * `c_up[i, j] = -α (ψ_j I, ∇φ_i) + α ⟨ψ_j n, φ_i⟩_{Γ_N}`
//! * `d_pu[i, j] = α (∇·φ_j, ψ_i)`
//!
//! All cells of a structured grid are congruent, so every element matrix is
//! computed once and scattered into each cell.

use crate::discretization::{facet_local_nodes, local_digits, BoundaryTag, Point, ProblemKind, TaylorHoodSpace};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Material coefficients. Units follow the parameter table of the Mandel
/// benchmark; `density` is carried for completeness and enters no equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub compressibility_modulus: f64,
    pub biot_alpha: f64,
    pub permeability: f64,
    pub viscosity: f64,
    pub lame_mu: f64,
    pub lame_lambda: f64,
    pub traction: f64,
    pub density: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            compressibility_modulus: 1.75e7,
            biot_alpha: 1.0,
            permeability: 1e-13,
            viscosity: 1e-3,
            lame_mu: 1e8,
            lame_lambda: 2.0 / 3.0 * 1e8,
            traction: 1e7,
            density: 1.0,
        }
    }
}

impl MaterialParams {
    /// Storage coefficient `c = 1/M`.
    pub fn storage_coefficient(&self) -> f64 {
        1.0 / self.compressibility_modulus
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("compressibility_modulus", self.compressibility_modulus),
            ("permeability", self.permeability),
            ("viscosity", self.viscosity),
            ("lame_mu", self.lame_mu),
            ("lame_lambda", self.lame_lambda),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.biot_alpha) {
            return Err(Error::invalid(format!("biot_alpha must lie in [0, 1], got {}", self.biot_alpha)));
        }
        if !self.traction.is_finite() {
            return Err(Error::invalid("traction must be finite"));
        }
        Ok(())
    }
}

/// Full-order block operators plus load and goal vectors.
#[derive(Debug, Clone)]
pub struct BlockOperators {
    pub a_uu: CsrMatrix,
    pub k_pp: CsrMatrix,
    pub m_pp: CsrMatrix,
    pub c_up: CsrMatrix,
    pub d_pu: CsrMatrix,
    pub f_traction: Vec<f64>,
    pub g_goal: Vec<f64>,
    /// Constrained displacement dofs (sorted); prescribed value zero.
    pub dirichlet_u: Vec<usize>,
    /// Constrained pressure dofs (sorted); prescribed value zero.
    pub dirichlet_p: Vec<usize>,
}

impl BlockOperators {
    pub fn n_u(&self) -> usize {
        self.a_uu.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.m_pp.nrows()
    }
}

/// Boundary regions carrying traction conditions (the coupling boundary term lives here).
pub fn neumann_tags(kind: ProblemKind) -> &'static [BoundaryTag] {
    match kind {
        ProblemKind::Mandel => &[BoundaryTag::Top, BoundaryTag::Right],
        ProblemKind::Footing => &[BoundaryTag::Top, BoundaryTag::Compression, BoundaryTag::Wall],
    }
}

/// Tag and unit direction of the applied traction `-t̄ e`.
pub fn traction_load(kind: ProblemKind) -> (BoundaryTag, Point) {
    match kind {
        ProblemKind::Mandel => (BoundaryTag::Top, [0.0, 1.0, 0.0]),
        ProblemKind::Footing => (BoundaryTag::Compression, [0.0, 0.0, 1.0]),
    }
}

pub fn goal_tag(kind: ProblemKind) -> BoundaryTag {
    match kind {
        ProblemKind::Mandel => BoundaryTag::Bottom,
        ProblemKind::Footing => BoundaryTag::Compression,
    }
}

/// Assembles every block for a benchmark and applies its Dirichlet constraints.
pub fn assemble_problem(space: &TaylorHoodSpace, material: &MaterialParams, kind: ProblemKind) -> Result<BlockOperators> {
    material.validate()?;
    if space.dim() != kind.spatial_dim() {
        return Err(Error::invalid("space dimension does not match problem kind"));
    }
    let a_uu = assemble_elasticity(space, material.lame_mu, material.lame_lambda);
    let (m_pp, k_pp) = assemble_pressure_blocks(space, material.storage_coefficient(), material.permeability, material.viscosity);
    let (c_up, d_pu) = assemble_coupling(space, material.biot_alpha, neumann_tags(kind))?;
    let (ttag, dir) = traction_load(kind);
    let f_traction = assemble_traction(space, ttag, material.traction, &dir)?;
    let g_goal = assemble_goal_vector(space, goal_tag(kind))?;
    let ops = BlockOperators {
        a_uu,
        k_pp,
        m_pp,
        c_up,
        d_pu,
        f_traction,
        g_goal,
        dirichlet_u: Vec::new(),
        dirichlet_p: Vec::new(),
    };
    Ok(apply_dirichlet(ops, space, kind))
}

pub fn assemble_elasticity(space: &TaylorHoodSpace, mu: f64, lambda: f64) -> CsrMatrix {
    let dim = space.dim();
    let elem = RefElement::new(dim, space.mesh.cell_size());
    let nloc = elem.u_nodes();
    let size = nloc * dim;
    let mut ke = vec![0.0; size * size];
    for q in &elem.volume_points {
        let (_, gu) = elem.u_basis(&q.s);
        for a in 0..nloc {
            for b in 0..nloc {
                let ga = &gu[a];
                let gb = &gu[b];
                let grad_dot: f64 = (0..dim).map(|x| ga[x] * gb[x]).sum();
                for c in 0..dim {
                    for e in 0..dim {
                        let mut v = mu * ga[e] * gb[c] + lambda * ga[c] * gb[e];
                        if c == e {
                            v += mu * grad_dot;
                        }
                        ke[(a * dim + c) * size + b * dim + e] += q.w * v;
                    }
                }
            }
        }
    }
    let mut triplets = Vec::with_capacity(space.mesh.num_cells() * size * size);
    for nodes in &space.u_dof_map {
        let dofs: Vec<usize> = nodes.iter().flat_map(|&n| (0..dim).map(move |c| n * dim + c)).collect();
        for (i, &gi) in dofs.iter().enumerate() {
            for (j, &gj) in dofs.iter().enumerate() {
                triplets.push((gi, gj, ke[i * size + j]));
            }
        }
    }
    CsrMatrix::from_triplets(space.n_u, space.n_u, triplets)
}

/// Returns `(M_pp, K_pp)`: storage mass scaled by `c` and Darcy stiffness scaled by `K/ν`.
pub fn assemble_pressure_blocks(space: &TaylorHoodSpace, c: f64, permeability: f64, viscosity: f64) -> (CsrMatrix, CsrMatrix) {
    let dim = space.dim();
    let elem = RefElement::new(dim, space.mesh.cell_size());
    let nloc = elem.p_nodes();
    let mut me = vec![0.0; nloc * nloc];
    let mut ke = vec![0.0; nloc * nloc];
    let mobility = permeability / viscosity;
    for q in &elem.volume_points {
        let (vp, gp) = elem.p_basis(&q.s);
        for i in 0..nloc {
            for j in 0..nloc {
                me[i * nloc + j] += q.w * c * vp[i] * vp[j];
                ke[i * nloc + j] += q.w * mobility * (0..dim).map(|x| gp[i][x] * gp[j][x]).sum::<f64>();
            }
        }
    }
    let mut mt = Vec::new();
    let mut kt = Vec::new();
    for nodes in &space.p_dof_map {
        for (i, &gi) in nodes.iter().enumerate() {
            for (j, &gj) in nodes.iter().enumerate() {
                mt.push((gi, gj, me[i * nloc + j]));
                kt.push((gi, gj, ke[i * nloc + j]));
            }
        }
    }
    (
        CsrMatrix::from_triplets(space.n_p, space.n_p, mt),
        CsrMatrix::from_triplets(space.n_p, space.n_p, kt),
    )
}

/// Returns `(C_up, D_pu)`. The boundary term of `C_up` is integrated over the facets
/// carrying any of `neumann_tags`.
pub fn assemble_coupling(space: &TaylorHoodSpace, alpha: f64, neumann_tags: &[BoundaryTag]) -> Result<(CsrMatrix, CsrMatrix)> {
    for tag in neumann_tags {
        if !space.mesh.has_tag(*tag) {
            return Err(Error::invalid(format!("boundary tag '{}' not present on mesh", tag.name())));
        }
    }
    let dim = space.dim();
    let elem = RefElement::new(dim, space.mesh.cell_size());
    let nu = elem.u_nodes();
    let np = elem.p_nodes();
    let usize_ = nu * dim;
    // de[i, (b, e)] = α ∫ ∂_e N_b ψ_i
    let mut de = vec![0.0; np * usize_];
    for q in &elem.volume_points {
        let (_, gu) = elem.u_basis(&q.s);
        let (vp, _) = elem.p_basis(&q.s);
        for i in 0..np {
            for b in 0..nu {
                for e in 0..dim {
                    de[i * usize_ + b * dim + e] += q.w * alpha * gu[b][e] * vp[i];
                }
            }
        }
    }

    let mut ct = Vec::new();
    let mut dt = Vec::new();
    for (unodes, pnodes) in space.u_dof_map.iter().zip(&space.p_dof_map) {
        for (i, &pi) in pnodes.iter().enumerate() {
            for (b, &ub) in unodes.iter().enumerate() {
                for e in 0..dim {
                    let v = de[i * usize_ + b * dim + e];
                    dt.push((pi, ub * dim + e, v));
                    ct.push((ub * dim + e, pi, -v));
                }
            }
        }
    }

    // α ⟨ψ_j n, φ_i⟩ on the traction boundary; n = ±e_axis, so only the normal component couples.
    for facet in space.mesh.boundary_facets.iter().filter(|f| f.tag.is_some_and(|t| neumann_tags.contains(&t))) {
        let axis = facet.axis();
        let sign = if facet.is_upper() { 1.0 } else { -1.0 };
        let unodes = &space.u_dof_map[facet.cell];
        let pnodes = &space.p_dof_map[facet.cell];
        for q in elem.facet_points(axis, facet.is_upper()) {
            let (vu, _) = elem.u_basis(&q.s);
            let (vp, _) = elem.p_basis(&q.s);
            for (a, &ua) in unodes.iter().enumerate() {
                if vu[a] == 0.0 {
                    continue;
                }
                for (j, &pj) in pnodes.iter().enumerate() {
                    ct.push((ua * dim + axis, pj, q.w * alpha * sign * vp[j] * vu[a]));
                }
            }
        }
    }

    Ok((
        CsrMatrix::from_triplets(space.n_u, space.n_p, ct),
        CsrMatrix::from_triplets(space.n_p, space.n_u, dt),
    ))
}

/// Load vector of the traction `-t̄ · direction` applied on `tag`.
pub fn assemble_traction(space: &TaylorHoodSpace, tag: BoundaryTag, tbar: f64, direction: &[f64]) -> Result<Vec<f64>> {
    if !space.mesh.has_tag(tag) {
        return Err(Error::invalid(format!("boundary tag '{}' not present on mesh", tag.name())));
    }
    let dim = space.dim();
    if direction.len() < dim {
        return Err(Error::dims("traction direction shorter than spatial dimension"));
    }
    let elem = RefElement::new(dim, space.mesh.cell_size());
    let mut f = vec![0.0; space.n_u];
    for facet in space.mesh.facets_with_tag(tag) {
        let unodes = &space.u_dof_map[facet.cell];
        for q in elem.facet_points(facet.axis(), facet.is_upper()) {
            let (vu, _) = elem.u_basis(&q.s);
            for (a, &ua) in unodes.iter().enumerate() {
                for c in 0..dim {
                    f[ua * dim + c] += q.w * (-tbar * direction[c]) * vu[a];
                }
            }
        }
    }
    Ok(f)
}

/// `g[i] = ∫_Γ ψ_i ds`, so `gᵀp` is the boundary integral of the pressure field.
pub fn assemble_goal_vector(space: &TaylorHoodSpace, tag: BoundaryTag) -> Result<Vec<f64>> {
    if !space.mesh.has_tag(tag) {
        return Err(Error::invalid(format!("boundary tag '{}' not present on mesh", tag.name())));
    }
    let elem = RefElement::new(space.dim(), space.mesh.cell_size());
    let mut g = vec![0.0; space.n_p];
    for facet in space.mesh.facets_with_tag(tag) {
        let pnodes = &space.p_dof_map[facet.cell];
        for q in elem.facet_points(facet.axis(), facet.is_upper()) {
            let (vp, _) = elem.p_basis(&q.s);
            for (j, &pj) in pnodes.iter().enumerate() {
                g[pj] += q.w * vp[j];
            }
        }
    }
    Ok(g)
}

/// Constrained dof sets `(u, p)` of a benchmark, sorted.
pub fn dirichlet_dofs(space: &TaylorHoodSpace, kind: ProblemKind) -> (Vec<usize>, Vec<usize>) {
    let dim = space.dim();
    match kind {
        ProblemKind::Mandel => {
            let mut u: Vec<usize> = space.u_nodes_on(BoundaryTag::Bottom).into_iter().map(|n| n * dim + 1).collect();
            u.extend(space.u_nodes_on(BoundaryTag::Left).into_iter().map(|n| n * dim));
            u.sort_unstable();
            u.dedup();
            let p = space.p_nodes_on(BoundaryTag::Right).into_iter().collect();
            (u, p)
        }
        ProblemKind::Footing => {
            let u = space
                .u_nodes_on(BoundaryTag::Bottom)
                .into_iter()
                .flat_map(|n| (0..dim).map(move |c| n * dim + c))
                .collect();
            let p = space.p_nodes_on(BoundaryTag::Bottom).into_iter().collect();
            (u, p)
        }
    }
}

/// Homogeneous Dirichlet constraints by symmetric elimination.
///
/// Constrained rows and columns are removed from every block; `a_uu` and
/// `m_pp` get a unit diagonal on their constrained dofs so the step matrix
/// carries identity rows there, and load/goal entries are zeroed.
pub fn apply_dirichlet(ops: BlockOperators, space: &TaylorHoodSpace, kind: ProblemKind) -> BlockOperators {
    let (du, dp) = dirichlet_dofs(space, kind);
    let mut fu = vec![false; ops.n_u()];
    let mut fp = vec![false; ops.n_p()];
    du.iter().for_each(|&i| fu[i] = true);
    dp.iter().for_each(|&i| fp[i] = true);
    let mut f_traction = ops.f_traction;
    let mut g_goal = ops.g_goal;
    du.iter().for_each(|&i| f_traction[i] = 0.0);
    dp.iter().for_each(|&i| g_goal[i] = 0.0);
    BlockOperators {
        a_uu: ops.a_uu.eliminate(&fu, &fu, true),
        k_pp: ops.k_pp.eliminate(&fp, &fp, false),
        m_pp: ops.m_pp.eliminate(&fp, &fp, true),
        c_up: ops.c_up.eliminate(&fu, &fp, false),
        d_pu: ops.d_pu.eliminate(&fp, &fu, false),
        f_traction,
        g_goal,
        dirichlet_u: du,
        dirichlet_p: dp,
    }
}

struct QuadPoint {
    /// Reference coordinates in `[0, 1]^d`.
    s: [f64; 3],
    /// Weight including the physical measure.
    w: f64,
}

/// Three-point Gauss rule on `[0, 1]`.
fn gauss3() -> [(f64, f64); 3] {
    let d = 0.5 * (3.0f64 / 5.0).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
}

fn q2_1d(s: f64) -> ([f64; 3], [f64; 3]) {
    (
        [(1.0 - s) * (1.0 - 2.0 * s), 4.0 * s * (1.0 - s), s * (2.0 * s - 1.0)],
        [4.0 * s - 3.0, 4.0 - 8.0 * s, 4.0 * s - 1.0],
    )
}

fn q1_1d(s: f64) -> ([f64; 3], [f64; 3]) {
    ([1.0 - s, s, 0.0], [-1.0, 1.0, 0.0])
}

struct RefElement {
    dim: usize,
    h: Point,
    volume_points: Vec<QuadPoint>,
}

impl RefElement {
    fn new(dim: usize, h: Point) -> Self {
        let g = gauss3();
        let jac: f64 = h[..dim].iter().product();
        let volume_points = (0..3usize.pow(dim as u32))
            .map(|l| {
                let d = local_digits(l, 3);
                let mut s = [0.0; 3];
                let mut w = jac;
                for a in 0..dim {
                    s[a] = g[d[a]].0;
                    w *= g[d[a]].1;
                }
                QuadPoint { s, w }
            })
            .collect();
        Self { dim, h, volume_points }
    }

    fn u_nodes(&self) -> usize {
        3usize.pow(self.dim as u32)
    }

    fn p_nodes(&self) -> usize {
        1 << self.dim
    }

    fn facet_points(&self, axis: usize, upper: bool) -> Vec<QuadPoint> {
        let g = gauss3();
        let others: Vec<usize> = (0..self.dim).filter(|&a| a != axis).collect();
        let measure: f64 = others.iter().map(|&a| self.h[a]).product();
        (0..3usize.pow(others.len() as u32))
            .map(|l| {
                let d = local_digits(l, 3);
                let mut s = [0.0; 3];
                s[axis] = if upper { 1.0 } else { 0.0 };
                let mut w = measure;
                for (k, &a) in others.iter().enumerate() {
                    s[a] = g[d[k]].0;
                    w *= g[d[k]].1;
                }
                QuadPoint { s, w }
            })
            .collect()
    }

    fn u_basis(&self, s: &[f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
        self.tensor_basis(s, 3, q2_1d)
    }

    fn p_basis(&self, s: &[f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
        self.tensor_basis(s, 2, q1_1d)
    }

    fn tensor_basis(&self, s: &[f64; 3], per_axis: usize, shape: fn(f64) -> ([f64; 3], [f64; 3])) -> (Vec<f64>, Vec<[f64; 3]>) {
        let dim = self.dim;
        let tables: Vec<_> = (0..dim).map(|a| shape(s[a])).collect();
        let n = per_axis.pow(dim as u32);
        let mut values = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for l in 0..n {
            let d = local_digits(l, per_axis);
            let v: f64 = (0..dim).map(|a| tables[a].0[d[a]]).product();
            let mut g = [0.0; 3];
            for (x, gx) in g.iter_mut().enumerate().take(dim) {
                *gx = (0..dim)
                    .map(|a| if a == x { tables[a].1[d[a]] / self.h[a] } else { tables[a].0[d[a]] })
                    .product();
            }
            values.push(v);
            grads.push(g);
        }
        (values, grads)
    }
}

/// Local Q2 nodes on a face; exposed for tests of boundary incidence.
pub fn face_u_nodes(dim: usize, axis: usize, upper: bool) -> Vec<usize> {
    facet_local_nodes(dim, 3, axis, upper)
}
