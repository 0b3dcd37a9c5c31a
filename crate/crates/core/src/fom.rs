//! Backward-Euler full-order time stepping for the primal problem (forward)
//! and the adjoint problem (backward). The mechanics row is not scaled by `k`.
//!
//! Unknowns are stacked as `(u, p)`. The primal step on `I_m` solves
//!
//! ```text
//! [ A   C      ] [u_m]   [ f                     ]
//! [ D   M + kK ] [p_m] = [ M p_{m-1} + D u_{m-1} ]
//! ```
//!
//! and the adjoint step on `I_m` solves the transposed system for
//! `(z^u_{m-1}, z^p_{m-1})` with right-hand side `(Dᵀ z^p_m, M z^p_m + k g)`.

use std::time::{Duration, Instant};

use crate::assembly::BlockOperators;
use crate::error::{Error, Result};
use crate::linsolve::{LinearSolver, LinearSolverConfig};
use crate::sparse::{dot, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub num_elements: usize,
    pub k: f64,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, num_elements: usize) -> Result<Self> {
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::invalid(format!("time interval ({t_start}, {t_end}) is empty")));
        }
        let k = (t_end - t_start) / num_elements.max(1) as f64;
        Ok(Self { t_start, t_end, num_elements, k })
    }

    /// `t_m`
    pub fn time(&self, m: usize) -> f64 {
        self.t_start + m as f64 * self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub time_index: usize,
}

impl StateVector {
    pub fn zeros(n_u: usize, n_p: usize, time_index: usize) -> Self {
        Self { u: vec![0.0; n_u], p: vec![0.0; n_p], time_index }
    }

    pub fn stacked(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.u.len() + self.p.len());
        x.extend_from_slice(&self.u);
        x.extend_from_slice(&self.p);
        x
    }

    pub fn from_stacked(mut x: Vec<f64>, n_u: usize, time_index: usize) -> Self {
        let p = x.split_off(n_u);
        Self { u: x, p, time_index }
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(&self.p).all(|v| *v == 0.0)
    }
}

/// States `0..=M`. For a primal trajectory index 0 is the initial state; for a
/// dual trajectory index `M` is the terminal state and index `m-1` lives on `I_m`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub wall_time: Duration,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// `[[A, C], [D, M + kK]]`
pub fn step_matrix(ops: &BlockOperators, k: f64) -> CsrMatrix {
    let (nu, np) = (ops.n_u(), ops.n_p());
    let mut t = Vec::with_capacity(ops.a_uu.nnz() + ops.c_up.nnz() + ops.d_pu.nnz() + ops.m_pp.nnz() + ops.k_pp.nnz());
    ops.a_uu.push_triplets(0, 0, &mut t);
    ops.c_up.push_triplets(0, nu, &mut t);
    ops.d_pu.push_triplets(nu, 0, &mut t);
    ops.m_pp.push_triplets(nu, nu, &mut t);
    ops.k_pp.scaled(k).push_triplets(nu, nu, &mut t);
    CsrMatrix::from_triplets(nu + np, nu + np, t)
}

/// Adjoint step matrix assembled from the transposed blocks: `[[Aᵀ, Dᵀ], [Cᵀ, Mᵀ + kKᵀ]]`.
pub fn dual_step_matrix(ops: &BlockOperators, k: f64) -> CsrMatrix {
    let (nu, np) = (ops.n_u(), ops.n_p());
    let mut t = Vec::new();
    ops.a_uu.transpose().push_triplets(0, 0, &mut t);
    ops.d_pu.transpose().push_triplets(0, nu, &mut t);
    ops.c_up.transpose().push_triplets(nu, 0, &mut t);
    ops.m_pp.transpose().push_triplets(nu, nu, &mut t);
    ops.k_pp.transpose().scaled(k).push_triplets(nu, nu, &mut t);
    CsrMatrix::from_triplets(nu + np, nu + np, t)
}

/// Step-system solver for one operator set and timestep.
pub struct FomSolver<'a> {
    pub ops: &'a BlockOperators,
    pub k: f64,
    solver: LinearSolver,
}

impl<'a> FomSolver<'a> {
    pub fn new(ops: &'a BlockOperators, k: f64, config: &LinearSolverConfig) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::invalid(format!("timestep must be positive, got {k}")));
        }
        let solver = LinearSolver::new(step_matrix(ops, k), config)?;
        Ok(Self { ops, k, solver })
    }

    pub fn linear_solver(&self) -> &LinearSolver {
        &self.solver
    }

    fn check(&self, s: &StateVector) -> Result<()> {
        if s.u.len() != self.ops.n_u() || s.p.len() != self.ops.n_p() {
            return Err(Error::dims(format!(
                "state has ({}, {}) entries, operators expect ({}, {})",
                s.u.len(),
                s.p.len(),
                self.ops.n_u(),
                self.ops.n_p()
            )));
        }
        Ok(())
    }

    /// Right-hand side of the primal step given the previous state.
    pub fn primal_rhs(&self, prev: &StateVector) -> Vec<f64> {
        let mut rhs = self.ops.f_traction.clone();
        let mp = self.ops.m_pp.mul_vec(&prev.p);
        let du = self.ops.d_pu.mul_vec(&prev.u);
        rhs.extend(mp.iter().zip(&du).map(|(a, b)| a + b));
        rhs
    }

    /// One backward-Euler step from `prev`, warm-started from `prev` for iterative solves.
    pub fn primal_step(&self, prev: &StateVector) -> Result<StateVector> {
        self.check(prev)?;
        let rhs = self.primal_rhs(prev);
        let x = self.solver.solve(&rhs, Some(&prev.stacked()))?;
        Ok(StateVector::from_stacked(x, self.ops.n_u(), prev.time_index + 1))
    }

    /// One adjoint step from `next = z_m`, returning `z_{m-1}`.
    pub fn dual_step(&self, next: &StateVector) -> Result<StateVector> {
        self.check(next)?;
        if next.time_index == 0 {
            return Err(Error::invalid("dual step from time index 0"));
        }
        let mut rhs = self.ops.d_pu.mul_vec_transpose(&next.p);
        let mz = self.ops.m_pp.mul_vec_transpose(&next.p);
        rhs.extend(mz.iter().zip(&self.ops.g_goal).map(|(a, g)| a + self.k * g));
        let x = self.solver.solve_transpose(&rhs, Some(&next.stacked()))?;
        Ok(StateVector::from_stacked(x, self.ops.n_u(), next.time_index - 1))
    }

    /// Step residual `S U_m − rhs(U_{m−1})` stacked as `(u, p)`.
    pub fn primal_residual(&self, prev: &StateVector, cur: &StateVector) -> Vec<f64> {
        let rhs = self.primal_rhs(prev);
        let mut r = self.solver.matrix().mul_vec(&cur.stacked());
        r.iter_mut().zip(&rhs).for_each(|(a, b)| *a -= b);
        r
    }
}

pub fn run_primal_fom(solver: &FomSolver, grid: &TimeGrid, initial: StateVector) -> Result<Trajectory> {
    check_grid(solver, grid)?;
    let start = Instant::now();
    let mut states = Vec::with_capacity(grid.num_elements + 1);
    states.push(initial);
    for m in 1..=grid.num_elements {
        let next = solver.primal_step(&states[m - 1])?;
        states.push(next);
    }
    Ok(Trajectory { states, wall_time: start.elapsed() })
}

/// Adjoint sweep from the terminal condition `z_M = 0` back to `z_0`.
pub fn run_dual_fom(solver: &FomSolver, grid: &TimeGrid) -> Result<Trajectory> {
    check_grid(solver, grid)?;
    let start = Instant::now();
    let m_total = grid.num_elements;
    let mut states = vec![StateVector::zeros(solver.ops.n_u(), solver.ops.n_p(), m_total)];
    for _ in 0..m_total {
        let next = solver.dual_step(states.last().unwrap())?;
        states.push(next);
    }
    states.reverse();
    Ok(Trajectory { states, wall_time: start.elapsed() })
}

fn check_grid(solver: &FomSolver, grid: &TimeGrid) -> Result<()> {
    if grid.num_elements > 0 && (solver.k - grid.k).abs() > 1e-12 * grid.k {
        return Err(Error::invalid(format!("solver timestep {} differs from grid timestep {}", solver.k, grid.k)));
    }
    Ok(())
}

/// `gᵀp_m` for `m = 1..=M`.
pub fn goal_integrands(trajectory: &Trajectory, g_goal: &[f64]) -> Vec<f64> {
    trajectory.states.iter().skip(1).map(|s| dot(g_goal, &s.p)).collect()
}

/// `J = Σ_m k gᵀp_m`
pub fn evaluate_goal(trajectory: &Trajectory, grid: &TimeGrid, g_goal: &[f64]) -> f64 {
    goal_integrands(trajectory, g_goal).iter().map(|v| grid.k * v).sum()
}
