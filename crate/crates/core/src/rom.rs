//! Galerkin projection onto separate primal and dual POD bases and reduced time stepping.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;

use crate::assembly::BlockOperators;
use crate::error::{Error, Result};
use crate::fom::{StateVector, TimeGrid, Trajectory};
use crate::pod::PodBasis;
use crate::sparse::CsrMatrix;

/// The four POD bases. `version` increases whenever any basis changes.
#[derive(Debug, Clone)]
pub struct ReducedBases {
    pub primal_u: PodBasis,
    pub primal_p: PodBasis,
    pub dual_u: PodBasis,
    pub dual_p: PodBasis,
    pub version: u64,
}

impl ReducedBases {
    pub fn new(n_u: usize, n_p: usize, energy: [f64; 4]) -> Result<Self> {
        Ok(Self {
            primal_u: PodBasis::new(n_u, energy[0])?,
            primal_p: PodBasis::new(n_p, energy[1])?,
            dual_u: PodBasis::new(n_u, energy[2])?,
            dual_p: PodBasis::new(n_p, energy[3])?,
            version: 0,
        })
    }

    /// `[N^u_primal, N^p_primal, N^u_dual, N^p_dual]`
    pub fn sizes(&self) -> [usize; 4] {
        [self.primal_u.rank(), self.primal_p.rank(), self.dual_u.rank(), self.dual_p.rank()]
    }
}

/// Blocks of the FOM operators sandwiched between a test and a trial basis pair.
#[derive(Debug, Clone)]
pub struct ReducedBlocks {
    pub a: Mat<f64>,
    pub c: Mat<f64>,
    pub d: Mat<f64>,
    pub m: Mat<f64>,
    pub k: Mat<f64>,
    /// Traction projected on the displacement test basis.
    pub f: Vec<f64>,
    /// Goal vector projected on the pressure test basis.
    pub g: Vec<f64>,
}

fn sandwich(test: &Mat<f64>, op: &CsrMatrix, trial: &Mat<f64>) -> Mat<f64> {
    let applied = op.mul_dense(trial);
    test.transpose() * &applied
}

fn project_vec(test: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..test.ncols())
        .map(|j| (0..test.nrows()).map(|i| test[(i, j)] * v[i]).sum())
        .collect()
}

/// `(test)ᵀ · block · (trial)` for every block.
pub fn project_blocks(ops: &BlockOperators, test_u: &Mat<f64>, test_p: &Mat<f64>, trial_u: &Mat<f64>, trial_p: &Mat<f64>) -> Result<ReducedBlocks> {
    let (nu, np) = (ops.n_u(), ops.n_p());
    if test_u.nrows() != nu || trial_u.nrows() != nu || test_p.nrows() != np || trial_p.nrows() != np {
        return Err(Error::dims(format!("basis row counts do not match operator sizes ({nu}, {np})")));
    }
    Ok(ReducedBlocks {
        a: sandwich(test_u, &ops.a_uu, trial_u),
        c: sandwich(test_u, &ops.c_up, trial_p),
        d: sandwich(test_p, &ops.d_pu, trial_u),
        m: sandwich(test_p, &ops.m_pp, trial_p),
        k: sandwich(test_p, &ops.k_pp, trial_p),
        f: project_vec(test_u, &ops.f_traction),
        g: project_vec(test_p, &ops.g_goal),
    })
}

#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub primal: ReducedBlocks,
    pub dual: ReducedBlocks,
    /// Dual bases on the test side, primal bases on the trial side.
    pub cross: ReducedBlocks,
    pub version: u64,
}

pub fn project_operators(ops: &BlockOperators, bases: &ReducedBases) -> Result<ReducedOperators> {
    let (pu, pp) = (&bases.primal_u.modes, &bases.primal_p.modes);
    let (du, dp) = (&bases.dual_u.modes, &bases.dual_p.modes);
    Ok(ReducedOperators {
        primal: project_blocks(ops, pu, pp, pu, pp)?,
        dual: project_blocks(ops, du, dp, du, dp)?,
        cross: project_blocks(ops, du, dp, pu, pp)?,
        version: bases.version,
    })
}

/// Coefficients per time index `0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTrajectory {
    pub u: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub version: u64,
}

impl ReducedTrajectory {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Dense LU of a diagonally equilibrated reduced step matrix.
struct ReducedStep {
    lu: Option<PartialPivLu<f64>>,
    scale: Vec<f64>,
}

impl ReducedStep {
    fn new(blocks: &ReducedBlocks, k: f64) -> Result<Self> {
        let (nu, np) = (blocks.a.nrows(), blocks.m.nrows());
        let n = nu + np;
        if blocks.a.ncols() != nu || blocks.m.ncols() != np {
            return Err(Error::dims("reduced step matrix must be square"));
        }
        let mut s = Mat::<f64>::zeros(n, n);
        for i in 0..nu {
            for j in 0..nu {
                s[(i, j)] = blocks.a[(i, j)];
            }
            for j in 0..np {
                s[(i, nu + j)] = blocks.c[(i, j)];
            }
        }
        for i in 0..np {
            for j in 0..nu {
                s[(nu + i, j)] = blocks.d[(i, j)];
            }
            for j in 0..np {
                s[(nu + i, nu + j)] = blocks.m[(i, j)] + k * blocks.k[(i, j)];
            }
        }
        if n == 0 {
            return Ok(Self { lu: None, scale: Vec::new() });
        }
        // Mechanics and flow rows differ by many orders of magnitude; equilibrate before pivoting.
        let scale: Vec<f64> = (0..n)
            .map(|i| {
                let d = s[(i, i)].abs();
                if d > 0.0 && d.is_finite() {
                    1.0 / d.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let scaled = Mat::from_fn(n, n, |i, j| scale[i] * s[(i, j)] * scale[j]);
        let lu = scaled.as_ref().partial_piv_lu();
        let u = lu.U();
        let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0f64, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-13 * max) || !max.is_finite() {
            return Err(Error::DegenerateBasis(format!("pivot ratio {:.3e} in reduced system of size {n}", min / max)));
        }
        Ok(Self { lu: Some(lu), scale })
    }

    /// Solves with every column of `rhs`.
    fn solve_columns(&self, mut rhs: Mat<f64>, transpose: bool) -> Mat<f64> {
        let Some(lu) = &self.lu else { return rhs };
        let scale_rows = |m: &mut Mat<f64>| {
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    m[(i, j)] *= self.scale[i];
                }
            }
        };
        scale_rows(&mut rhs);
        if transpose {
            lu.solve_transpose_in_place(&mut rhs);
        } else {
            lu.solve_in_place(&mut rhs);
        }
        scale_rows(&mut rhs);
        rhs
    }
}

/// Precomputed one-step map `x ↦ T x + c` stored row-major.
struct AffineStep {
    n: usize,
    t: Vec<f64>,
    c: Vec<f64>,
}

impl AffineStep {
    /// `T = S⁻¹R`, `c = S⁻¹b` (or with `Sᵀ` when `transpose`).
    fn new(step: &ReducedStep, r: Mat<f64>, b: &[f64], transpose: bool) -> Self {
        let n = b.len();
        let mut rhs = Mat::zeros(n, n + 1);
        for j in 0..n {
            for i in 0..n {
                rhs[(i, j)] = r[(i, j)];
            }
        }
        for (i, v) in b.iter().enumerate() {
            rhs[(i, n)] = *v;
        }
        let x = step.solve_columns(rhs, transpose);
        let mut t = Vec::with_capacity(n * n);
        for i in 0..n {
            t.extend((0..n).map(|j| x[(i, j)]));
        }
        Self { n, t, c: (0..n).map(|i| x[(i, n)]).collect() }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.c[i] + self.t[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

fn mat_vec(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * x[j]).sum()).collect()
}

/// `[[0, 0], [D, M]]`, the block multiplying the previous state.
fn history_block(b: &ReducedBlocks) -> Mat<f64> {
    let (nu, np) = (b.a.nrows(), b.m.nrows());
    let mut r = Mat::zeros(nu + np, nu + np);
    for i in 0..np {
        for j in 0..nu {
            r[(nu + i, j)] = b.d[(i, j)];
        }
        for j in 0..np {
            r[(nu + i, nu + j)] = b.m[(i, j)];
        }
    }
    r
}

fn split(mut x: Vec<f64>, nu: usize) -> (Vec<f64>, Vec<f64>) {
    let p = x.split_off(nu);
    (x, p)
}

/// Reduced backward-Euler sweep from zero initial data.
pub fn solve_primal_rom(red: &ReducedOperators, grid: &TimeGrid) -> Result<ReducedTrajectory> {
    let b = &red.primal;
    let step = ReducedStep::new(b, grid.k)?;
    let (nu, np) = (b.a.nrows(), b.m.nrows());
    let mut load = b.f.clone();
    load.resize(nu + np, 0.0);
    let map = AffineStep::new(&step, history_block(b), &load, false);
    let mut x = vec![0.0; nu + np];
    let mut u = vec![vec![0.0; nu]];
    let mut p = vec![vec![0.0; np]];
    for _ in 1..=grid.num_elements {
        x = map.apply(&x);
        let (xu, xp) = split(x.clone(), nu);
        u.push(xu);
        p.push(xp);
    }
    Ok(ReducedTrajectory { u, p, version: red.version })
}

/// Reduced adjoint sweep backward from `z_M = 0`; index `m-1` lives on `I_m`.
pub fn solve_dual_rom(red: &ReducedOperators, grid: &TimeGrid) -> Result<ReducedTrajectory> {
    let b = &red.dual;
    let step = ReducedStep::new(b, grid.k)?;
    let (nu, np) = (b.a.nrows(), b.m.nrows());
    let total = grid.num_elements;
    let mut load = vec![0.0; nu];
    load.extend(b.g.iter().map(|g| grid.k * g));
    let map = AffineStep::new(&step, history_block(b).transpose().to_owned(), &load, true);
    let mut u = vec![vec![0.0; nu]; total + 1];
    let mut p = vec![vec![0.0; np]; total + 1];
    let mut z = vec![0.0; nu + np];
    for m in (1..=total).rev() {
        z = map.apply(&z);
        (u[m - 1], p[m - 1]) = split(z.clone(), nu);
    }
    Ok(ReducedTrajectory { u, p, version: red.version })
}

/// `Ψ · coeffs`
pub fn lift(coeffs: &[f64], basis: &Mat<f64>) -> Result<Vec<f64>> {
    if coeffs.len() != basis.ncols() {
        return Err(Error::dims(format!("{} coefficients for {} modes", coeffs.len(), basis.ncols())));
    }
    Ok(mat_vec(basis, coeffs))
}

/// Full-order state at time index `m` of a reduced trajectory.
pub fn lift_state(traj: &ReducedTrajectory, m: usize, basis_u: &Mat<f64>, basis_p: &Mat<f64>) -> Result<StateVector> {
    if m >= traj.len() {
        return Err(Error::invalid(format!("time index {m} outside trajectory of length {}", traj.len())));
    }
    Ok(StateVector { u: lift(&traj.u[m], basis_u)?, p: lift(&traj.p[m], basis_p)?, time_index: m })
}

pub fn lift_trajectory(traj: &ReducedTrajectory, basis_u: &Mat<f64>, basis_p: &Mat<f64>) -> Result<Trajectory> {
    let states = (0..traj.len()).map(|m| lift_state(traj, m, basis_u, basis_p)).collect::<Result<_>>()?;
    Ok(Trajectory { states, wall_time: Default::default() })
}

/// `gᵀp_m` for `m = 1..=M` in reduced coordinates.
pub fn reduced_goal_integrands(red: &ReducedOperators, primal: &ReducedTrajectory) -> Vec<f64> {
    primal.p.iter().skip(1).map(|p| crate::sparse::dot(&red.primal.g, p)).collect()
}

pub fn reduced_goal(red: &ReducedOperators, primal: &ReducedTrajectory, grid: &TimeGrid) -> f64 {
    reduced_goal_integrands(red, primal).iter().map(|v| grid.k * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_problem, MaterialParams};
    use crate::discretization::{build_structured_mesh, build_taylor_hood_space, tag_boundaries, ProblemKind};
    use crate::fom::{evaluate_goal, run_dual_fom, run_primal_fom, FomSolver};
    use crate::linsolve::LinearSolverConfig;
    use rand::{Rng, SeedableRng};

    fn mandel_ops(nx: usize, ny: usize) -> BlockOperators {
        let m = build_structured_mesh(&[0.0, 0.0], &[100.0, 20.0], &[nx, ny]).unwrap();
        let s = build_taylor_hood_space(tag_boundaries(m, ProblemKind::Mandel).unwrap());
        assemble_problem(&s, &MaterialParams::default(), ProblemKind::Mandel).unwrap()
    }

    fn identity_basis(n: usize) -> PodBasis {
        let mut b = PodBasis::new(n, 1.0).unwrap();
        b.modes = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });
        b.singular_values = vec![1.0; n];
        b
    }

    fn full_bases(ops: &BlockOperators) -> ReducedBases {
        ReducedBases {
            primal_u: identity_basis(ops.n_u()),
            primal_p: identity_basis(ops.n_p()),
            dual_u: identity_basis(ops.n_u()),
            dual_p: identity_basis(ops.n_p()),
            version: 0,
        }
    }

    fn random_basis(n: usize, r: usize, seed: u64) -> Mat<f64> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let m = Mat::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
        m.as_ref().qr().compute_thin_Q()
    }

    fn dense_max_diff(a: &Mat<f64>, b: &[Vec<f64>]) -> f64 {
        let mut out = 0.0f64;
        for (i, row) in b.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out = out.max((a[(i, j)] - v).abs());
            }
        }
        out
    }

    #[test]
    fn identity_bases_reproduce_fom_blocks() {
        let ops = mandel_ops(4, 2);
        let red = project_operators(&ops, &full_bases(&ops)).unwrap();
        assert_eq!(dense_max_diff(&red.primal.a, &ops.a_uu.to_dense()), 0.0);
        assert_eq!(dense_max_diff(&red.cross.c, &ops.c_up.to_dense()), 0.0);
        assert_eq!(dense_max_diff(&red.dual.d, &ops.d_pu.to_dense()), 0.0);
        assert_eq!(red.primal.f, ops.f_traction);
    }

    #[test]
    fn random_bases_match_triple_product() {
        let ops = mandel_ops(4, 2);
        let (tu, tp) = (random_basis(ops.n_u(), 3, 1), random_basis(ops.n_p(), 2, 2));
        let (ru, rp) = (random_basis(ops.n_u(), 4, 3), random_basis(ops.n_p(), 3, 4));
        let r = project_blocks(&ops, &tu, &tp, &ru, &rp).unwrap();
        let dense = |m: &CsrMatrix| {
            let d = m.to_dense();
            Mat::from_fn(d.len(), d[0].len(), |i, j| d[i][j])
        };
        let triple = |t: &Mat<f64>, m: &CsrMatrix, s: &Mat<f64>| t.transpose() * dense(m) * s;
        for (got, want, scale) in [
            (&r.a, triple(&tu, &ops.a_uu, &ru), ops.a_uu.max_abs()),
            (&r.c, triple(&tu, &ops.c_up, &rp), ops.c_up.max_abs()),
            (&r.d, triple(&tp, &ops.d_pu, &ru), ops.d_pu.max_abs()),
            (&r.m, triple(&tp, &ops.m_pp, &rp), ops.m_pp.max_abs()),
            (&r.k, triple(&tp, &ops.k_pp, &rp), ops.k_pp.max_abs()),
        ] {
            for i in 0..got.nrows() {
                for j in 0..got.ncols() {
                    assert!((got[(i, j)] - want[(i, j)]).abs() <= 1e-12 * scale.max(1e-300) * 10.0);
                }
            }
        }
        // Single mode: the scalar ψᵀ A ψ.
        let psi = random_basis(ops.n_u(), 1, 9);
        let pp = random_basis(ops.n_p(), 1, 10);
        let r = project_blocks(&ops, &psi, &pp, &psi, &pp).unwrap();
        let v: Vec<f64> = (0..ops.n_u()).map(|i| psi[(i, 0)]).collect();
        let s = crate::sparse::dot(&v, &ops.a_uu.mul_vec(&v));
        assert!((r.a[(0, 0)] - s).abs() <= 1e-12 * s.abs());
    }

    #[test]
    fn full_bases_reproduce_fom_trajectories() {
        let ops = mandel_ops(4, 2);
        let grid = TimeGrid::new(0.0, 2e4, 20).unwrap();
        let solver = FomSolver::new(&ops, grid.k, &LinearSolverConfig::direct()).unwrap();
        let fom = run_primal_fom(&solver, &grid, StateVector::zeros(ops.n_u(), ops.n_p(), 0)).unwrap();
        let fom_dual = run_dual_fom(&solver, &grid).unwrap();
        let red = project_operators(&ops, &full_bases(&ops)).unwrap();
        let rom = solve_primal_rom(&red, &grid).unwrap();
        let rom_dual = solve_dual_rom(&red, &grid).unwrap();
        let j_fom = evaluate_goal(&fom, &grid, &ops.g_goal);
        let j_rom = reduced_goal(&red, &rom, &grid);
        assert!((j_fom - j_rom).abs() <= 1e-10 * j_fom.abs(), "{j_fom} vs {j_rom}");
        let scale = fom_dual.states[0].p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for m in 0..=20 {
            let diff = fom_dual.states[m].p.iter().zip(&rom_dual.p[m]).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(diff <= 1e-8 * scale);
        }
    }

    #[test]
    fn zero_data_gives_zero_trajectories() {
        let mut ops = mandel_ops(4, 2);
        ops.f_traction.iter_mut().for_each(|v| *v = 0.0);
        ops.g_goal.iter_mut().for_each(|v| *v = 0.0);
        let grid = TimeGrid::new(0.0, 1e4, 10).unwrap();
        let mut bases = full_bases(&ops);
        bases.primal_u.modes = random_basis(ops.n_u(), 3, 1);
        bases.primal_p.modes = random_basis(ops.n_p(), 2, 2);
        let red = project_operators(&ops, &bases).unwrap();
        assert!(solve_primal_rom(&red, &grid).unwrap().u.iter().flatten().all(|v| *v == 0.0));
        assert!(solve_dual_rom(&red, &grid).unwrap().p.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_bases_give_empty_coefficients() {
        let ops = mandel_ops(2, 1);
        let bases = ReducedBases::new(ops.n_u(), ops.n_p(), [1.0; 4]).unwrap();
        let red = project_operators(&ops, &bases).unwrap();
        let grid = TimeGrid::new(0.0, 1e3, 3).unwrap();
        let rom = solve_primal_rom(&red, &grid).unwrap();
        assert_eq!(rom.len(), 4);
        assert!(rom.u.iter().all(Vec::is_empty));
        assert_eq!(reduced_goal(&red, &rom, &grid), 0.0);
    }

    #[test]
    fn singular_reduced_system_detected() {
        let ops = mandel_ops(2, 1);
        let mut bases = ReducedBases::new(ops.n_u(), ops.n_p(), [1.0; 4]).unwrap();
        // Two identical columns make the projected step matrix rank deficient.
        let v = random_basis(ops.n_u(), 1, 3);
        bases.primal_u.modes = Mat::from_fn(ops.n_u(), 2, |i, _| v[(i, 0)]);
        let red = project_operators(&ops, &bases).unwrap();
        let grid = TimeGrid::new(0.0, 1e3, 1).unwrap();
        assert!(matches!(solve_primal_rom(&red, &grid), Err(Error::DegenerateBasis(_))));
    }

    #[test]
    fn lift_round_trips() {
        let psi = random_basis(30, 5, 4);
        assert!(lift(&[0.0; 5], &psi).unwrap().iter().all(|v| *v == 0.0));
        let v = lift(&[1.0, -2.0, 0.5, 0.0, 3.0], &psi).unwrap();
        let c = project_vec(&psi, &v);
        let back = lift(&c, &psi).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-13));
        assert!(lift(&[1.0], &psi).is_err());

        // Appending modes never increases the projection error of a fixed vector.
        let full = random_basis(30, 10, 6);
        let w: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let mut last = f64::INFINITY;
        for r in 1..=10 {
            let sub = Mat::from_fn(30, r, |i, j| full[(i, j)]);
            let proj = lift(&project_vec(&sub, &w), &sub).unwrap();
            let err = w.iter().zip(&proj).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err <= last + 1e-14);
            last = err;
        }
    }
}
