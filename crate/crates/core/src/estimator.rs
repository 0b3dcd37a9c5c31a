//! Dual-weighted residual estimates of the goal error, localized per time element.
//!
//! On `I_m` the estimate is the primal step residual of the reduced solution
//! tested with the dual weights `z_{m-1}`:
//!
//! ```text
//! η_m = −[ z^p·(M(p_m − p_{m−1}) + D(u_m − u_{m−1}) + kK p_m) + z^u·(A u_m + C p_m − f) ]
//! ```

use crate::error::{Error, Result};
use crate::fom::{FomSolver, TimeGrid, Trajectory};
use crate::rom::{ReducedOperators, ReducedTrajectory};
use crate::sparse::dot;
use faer::Mat;

/// `η_m` for `m = 1..=M`, evaluated with the dual × primal cross blocks.
pub fn estimate_elementwise(red: &ReducedOperators, primal: &ReducedTrajectory, dual: &ReducedTrajectory, grid: &TimeGrid) -> Result<Vec<f64>> {
    for v in [primal.version, dual.version] {
        if v != red.version {
            return Err(Error::StaleOperators { operators: red.version, trajectory: v });
        }
    }
    let total = grid.num_elements;
    if primal.len() != total + 1 || dual.len() != total + 1 {
        return Err(Error::dims(format!(
            "trajectories of length {} / {} for {total} elements",
            primal.len(),
            dual.len()
        )));
    }
    let x = &red.cross;
    let (tu, tp) = (x.a.nrows(), x.m.nrows());
    let (su, sp) = (x.a.ncols(), x.m.ncols());
    // Cross step matrix and history block, dual test rows by primal trial columns.
    let mut step = Mat::<f64>::zeros(tu + tp, su + sp);
    let mut history = Mat::<f64>::zeros(tu + tp, su + sp);
    for i in 0..tu {
        for j in 0..su {
            step[(i, j)] = x.a[(i, j)];
        }
        for j in 0..sp {
            step[(i, su + j)] = x.c[(i, j)];
        }
    }
    for i in 0..tp {
        for j in 0..su {
            step[(tu + i, j)] = x.d[(i, j)];
            history[(tu + i, j)] = x.d[(i, j)];
        }
        for j in 0..sp {
            step[(tu + i, su + j)] = x.m[(i, j)] + grid.k * x.k[(i, j)];
            history[(tu + i, su + j)] = x.m[(i, j)];
        }
    }
    let stacked = |t: &ReducedTrajectory, nu: usize, np: usize, cols: std::ops::Range<usize>| {
        Mat::from_fn(nu + np, cols.len(), |i, j| if i < nu { t.u[cols.start + j][i] } else { t.p[cols.start + j][i - nu] })
    };
    let current = &step * stacked(primal, su, sp, 1..total + 1);
    let previous = &history * stacked(primal, su, sp, 0..total);
    let eta = (0..total)
        .map(|c| {
            let (zu, zp) = (&dual.u[c], &dual.p[c]);
            let mech: f64 = (0..tu).map(|i| zu[i] * (current[(i, c)] - previous[(i, c)] - x.f[i])).sum();
            let flow: f64 = (0..tp).map(|i| zp[i] * (current[(tu + i, c)] - previous[(tu + i, c)])).sum();
            -(mech + flow)
        })
        .collect();
    Ok(eta)
}

/// Full-order evaluation of the same estimate for a lifted primal trajectory and FOM-space dual weights.
pub fn estimate_elementwise_fom(solver: &FomSolver, primal: &Trajectory, dual: &Trajectory) -> Result<Vec<f64>> {
    if primal.len() != dual.len() || primal.is_empty() {
        return Err(Error::dims("primal and dual trajectories must have equal, nonzero length"));
    }
    Ok((1..primal.len())
        .map(|m| {
            let r = solver.primal_residual(&primal.states[m - 1], &primal.states[m]);
            -dot(&dual.states[m - 1].stacked(), &r)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeEstimate {
    pub eta_rel: f64,
    pub eta_m_rel: Vec<f64>,
    /// 1-based element with the largest `|η_m^rel|`; ties go to the smallest index.
    pub argmax: usize,
}

/// Normalizes by the corrected goal `J_rom + Σ η_m`.
pub fn global_relative(eta_m: &[f64], j_rom: f64) -> Result<RelativeEstimate> {
    let eta: f64 = eta_m.iter().sum();
    let denom = j_rom + eta;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateNormalization);
    }
    let eta_m_rel: Vec<f64> = eta_m.iter().map(|e| e / denom).collect();
    let mut argmax = 0;
    for (i, v) in eta_m_rel.iter().enumerate() {
        if v.abs() > eta_m_rel[argmax].abs() {
            argmax = i;
        }
    }
    Ok(RelativeEstimate { eta_rel: eta / denom, eta_m_rel, argmax: argmax + 1 })
}

/// `|J_fom − J_rom| / |η|`
pub fn effectivity(j_fom: f64, j_rom: f64, eta: f64) -> Result<f64> {
    let err = j_fom - j_rom;
    if eta == 0.0 {
        return if err == 0.0 { Ok(1.0) } else { Err(Error::InfiniteEffectivity { true_error: err }) };
    }
    Ok((err / eta).abs())
}

/// `|J_fom − J_rom| / Σ|η_m|`
pub fn indicator(j_fom: f64, j_rom: f64, eta_m: &[f64]) -> Result<f64> {
    let err = j_fom - j_rom;
    let denom: f64 = eta_m.iter().map(|e| e.abs()).sum();
    if denom == 0.0 {
        return if err == 0.0 { Ok(1.0) } else { Err(Error::InfiniteEffectivity { true_error: err }) };
    }
    Ok(err.abs() / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub eta_m: Vec<f64>,
    pub eta: f64,
    pub eta_rel: f64,
    pub eta_m_rel: Vec<f64>,
    pub argmax: usize,
    pub j_rom: f64,
    pub j_fom: Option<f64>,
    pub i_eff: Option<f64>,
    pub i_ind: Option<f64>,
}

impl EstimateReport {
    pub fn new(eta_m: Vec<f64>, j_rom: f64, j_fom: Option<f64>) -> Result<Self> {
        let rel = global_relative(&eta_m, j_rom)?;
        let eta = eta_m.iter().sum();
        let (i_eff, i_ind) = match j_fom {
            Some(j) => (effectivity(j, j_rom, eta).ok(), indicator(j, j_rom, &eta_m).ok()),
            None => (None, None),
        };
        Ok(Self { eta, eta_rel: rel.eta_rel, eta_m_rel: rel.eta_m_rel, argmax: rel.argmax, eta_m, j_rom, j_fom, i_eff, i_ind })
    }

    /// `|J_fom − J_rom| / |J_fom|` when a reference is known.
    pub fn true_relative_error(&self) -> Option<f64> {
        self.j_fom.map(|j| ((j - self.j_rom) / j).abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_problem, BlockOperators, MaterialParams};
    use crate::discretization::{build_structured_mesh, build_taylor_hood_space, tag_boundaries, ProblemKind};
    use crate::fom::{evaluate_goal, run_dual_fom, run_primal_fom, StateVector};
    use crate::linsolve::LinearSolverConfig;
    use crate::pod::PodBasis;
    use crate::rom::{lift_trajectory, project_operators, reduced_goal, solve_dual_rom, solve_primal_rom, ReducedBases};
    use rand::{Rng, SeedableRng};

    #[test]
    fn relative_arithmetic() {
        let r = global_relative(&[1.0, 3.0, 2.0], 4.0).unwrap();
        assert!((r.eta_rel - 0.6).abs() < 1e-15);
        assert_eq!(r.argmax, 2);
        assert_eq!(r.eta_m_rel, vec![0.1, 0.3, 0.2]);
    }

    #[test]
    fn zero_and_cancelling_estimates() {
        let r = global_relative(&[0.0, 0.0, 0.0], 5.0).unwrap();
        assert_eq!((r.eta_rel, r.argmax), (0.0, 1));
        let r = global_relative(&[-2.0, 2.0], 10.0).unwrap();
        assert_eq!((r.eta_rel, r.argmax), (0.0, 1));
        assert!(matches!(global_relative(&[1.0], -1.0), Err(Error::DegenerateNormalization)));
    }

    #[test]
    fn effectivity_and_indicator() {
        assert_eq!(effectivity(3.0, 1.0, 2.0).unwrap(), 1.0);
        assert_eq!(effectivity(3.0, 1.0, -2.0).unwrap(), 1.0);
        assert!(matches!(effectivity(3.0, 1.0, 0.0), Err(Error::InfiniteEffectivity { .. })));
        assert_eq!(indicator(1.0, 1.0, &[1.0, -1.0]).unwrap(), 0.0);
        let eta_m = [0.5, 1.0, 0.5];
        assert_eq!(indicator(3.0, 1.0, &eta_m).unwrap(), effectivity(3.0, 1.0, 2.0).unwrap());
        assert!(indicator(3.0, 1.0, &[0.0]).is_err());
    }

    #[test]
    fn report_sums_in_order() {
        let r = EstimateReport::new(vec![0.1, 0.2, 0.3], 10.0, Some(10.6)).unwrap();
        assert_eq!(r.eta, 0.1 + 0.2 + 0.3);
        assert!((r.i_eff.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.true_relative_error().unwrap() - 0.6 / 10.6).abs() < 1e-15);
        let r = EstimateReport::new(vec![0.1], 1.0, None).unwrap();
        assert!(r.i_eff.is_none() && r.true_relative_error().is_none());
    }

    fn mandel_ops() -> BlockOperators {
        let m = build_structured_mesh(&[0.0, 0.0], &[100.0, 20.0], &[4, 2]).unwrap();
        let s = build_taylor_hood_space(tag_boundaries(m, ProblemKind::Mandel).unwrap());
        assemble_problem(&s, &MaterialParams::default(), ProblemKind::Mandel).unwrap()
    }

    fn basis_from(modes: Mat<f64>) -> PodBasis {
        let mut b = PodBasis::new(modes.nrows(), 1.0).unwrap();
        b.singular_values = vec![1.0; modes.ncols()];
        b.modes = modes;
        b
    }

    fn identity(n: usize) -> Mat<f64> {
        Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Orthonormal basis of the first `r` FOM snapshots, perturbed so it is not exact.
    fn snapshot_basis(traj: &Trajectory, r: usize, pressure: bool, seed: u64) -> Mat<f64> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let pick = |s: &StateVector| if pressure { s.p.clone() } else { s.u.clone() };
        let n = pick(&traj.states[1]).len();
        let cols: Vec<Vec<f64>> = (0..r).map(|j| pick(&traj.states[1 + 7 * j])).collect();
        let raw = Mat::from_fn(n, r, |i, j| cols[j][i] * (1.0 + 0.05 * rng.random_range(-1.0..1.0)));
        raw.as_ref().qr().compute_thin_Q()
    }

    #[test]
    fn estimate_with_full_order_dual_equals_goal_error() {
        let ops = mandel_ops();
        let grid = TimeGrid::new(0.0, 5e6, 20).unwrap();
        let solver = FomSolver::new(&ops, grid.k, &LinearSolverConfig::direct()).unwrap();
        let fom = run_primal_fom(&solver, &grid, StateVector::zeros(ops.n_u(), ops.n_p(), 0)).unwrap();
        let j_fom = evaluate_goal(&fom, &grid, &ops.g_goal);
        for r in 1..=3 {
            let bases = ReducedBases {
                primal_u: basis_from(snapshot_basis(&fom, r, false, r as u64)),
                primal_p: basis_from(snapshot_basis(&fom, r, true, 10 + r as u64)),
                dual_u: basis_from(identity(ops.n_u())),
                dual_p: basis_from(identity(ops.n_p())),
                version: 3,
            };
            let red = project_operators(&ops, &bases).unwrap();
            let primal = solve_primal_rom(&red, &grid).unwrap();
            let dual = solve_dual_rom(&red, &grid).unwrap();
            let j_rom = reduced_goal(&red, &primal, &grid);
            let eta: f64 = estimate_elementwise(&red, &primal, &dual, &grid).unwrap().iter().sum();
            let err = j_fom - j_rom;
            assert!(err.abs() > 1e-8 * j_fom.abs(), "rank {r} reproduces the goal");
            assert!((err - eta).abs() <= 1e-8 * err.abs().max(1e-12 * j_fom.abs()), "rank {r}: {err} vs {eta}");

            // The same value from the full-order dual sweep and the lifted primal.
            let dual_fom = run_dual_fom(&solver, &grid).unwrap();
            let lifted = lift_trajectory(&primal, &bases.primal_u.modes, &bases.primal_p.modes).unwrap();
            let eta_fom: f64 = estimate_elementwise_fom(&solver, &lifted, &dual_fom).unwrap().iter().sum();
            assert!((eta_fom - eta).abs() <= 1e-8 * eta.abs());
        }
    }

    #[test]
    fn reduced_and_lifted_evaluations_agree() {
        let ops = mandel_ops();
        let grid = TimeGrid::new(0.0, 5e6, 12).unwrap();
        let solver = FomSolver::new(&ops, grid.k, &LinearSolverConfig::direct()).unwrap();
        let fom = run_primal_fom(&solver, &grid, StateVector::zeros(ops.n_u(), ops.n_p(), 0)).unwrap();
        let dual_fom = run_dual_fom(&solver, &grid).unwrap();
        let bases = ReducedBases {
            primal_u: basis_from(snapshot_basis(&fom, 2, false, 1)),
            primal_p: basis_from(snapshot_basis(&fom, 1, true, 2)),
            dual_u: basis_from(snapshot_basis(&dual_fom, 1, false, 3)),
            dual_p: basis_from(snapshot_basis(&dual_fom, 1, true, 4)),
            version: 0,
        };
        let red = project_operators(&ops, &bases).unwrap();
        let primal = solve_primal_rom(&red, &grid).unwrap();
        let dual = solve_dual_rom(&red, &grid).unwrap();
        let reduced = estimate_elementwise(&red, &primal, &dual, &grid).unwrap();
        let lp = lift_trajectory(&primal, &bases.primal_u.modes, &bases.primal_p.modes).unwrap();
        let ld = lift_trajectory(&dual, &bases.dual_u.modes, &bases.dual_p.modes).unwrap();
        let lifted = estimate_elementwise_fom(&solver, &lp, &ld).unwrap();
        let scale = lifted.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in reduced.iter().zip(&lifted) {
            assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn full_bases_give_vanishing_estimate() {
        let ops = mandel_ops();
        let grid = TimeGrid::new(0.0, 5e6, 10).unwrap();
        let full = |n| basis_from(identity(n));
        let bases = ReducedBases { primal_u: full(ops.n_u()), primal_p: full(ops.n_p()), dual_u: full(ops.n_u()), dual_p: full(ops.n_p()), version: 0 };
        let red = project_operators(&ops, &bases).unwrap();
        let primal = solve_primal_rom(&red, &grid).unwrap();
        let dual = solve_dual_rom(&red, &grid).unwrap();
        let j = reduced_goal(&red, &primal, &grid);
        let eta: f64 = estimate_elementwise(&red, &primal, &dual, &grid).unwrap().iter().sum();
        assert!(eta.abs() <= 1e-9 * j.abs());
    }

    #[test]
    fn stale_trajectories_are_rejected() {
        let ops = mandel_ops();
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let full = |n| basis_from(identity(n));
        let bases = ReducedBases { primal_u: full(ops.n_u()), primal_p: full(ops.n_p()), dual_u: full(ops.n_u()), dual_p: full(ops.n_p()), version: 2 };
        let mut red = project_operators(&ops, &bases).unwrap();
        let primal = solve_primal_rom(&red, &grid).unwrap();
        let dual = solve_dual_rom(&red, &grid).unwrap();
        red.version = 3;
        assert!(matches!(
            estimate_elementwise(&red, &primal, &dual, &grid),
            Err(Error::StaleOperators { operators: 3, trajectory: 2 })
        ));
    }

    #[test]
    fn argmax_follows_permutation() {
        let eta = [0.3, -0.9, 0.2, 0.5];
        let base = global_relative(&eta, 7.0).unwrap();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<f64> = perm.iter().map(|&i| eta[i]).collect();
        let r = global_relative(&permuted, 7.0).unwrap();
        assert!((r.eta_rel - base.eta_rel).abs() < 1e-15);
        assert_eq!(perm[r.argmax - 1] + 1, base.argmax);
        assert_eq!(global_relative(&[1.0, -1.0, 1.0], 5.0).unwrap().argmax, 1);
    }
}
