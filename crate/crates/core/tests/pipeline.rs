//! End-to-end checks through the public API: full-order runs, reduced runs and estimates.

use moredwr::adaptive::{run_moredwr, MoreDwrConfig, Reference, RunStatus};
use moredwr::app::ProblemSpec;
use moredwr::discretization::ProblemKind;
use moredwr::estimator::{estimate_elementwise, estimate_elementwise_fom};
use moredwr::fom::{evaluate_goal, run_dual_fom, run_primal_fom, FomSolver, StateVector, TimeGrid};
use moredwr::linsolve::LinearSolverConfig;
use moredwr::pod::PodBasis;
use moredwr::rom::{lift_trajectory, project_operators, reduced_goal, solve_dual_rom, solve_primal_rom, ReducedBases};

fn spec(kind: ProblemKind, cells: &str, steps: usize) -> ProblemSpec {
    let mut s = ProblemSpec::defaults(kind);
    s.set("cells", cells).unwrap();
    s.set("steps", &steps.to_string()).unwrap();
    s
}

/// Bases filled from the first `count` FOM snapshots via incremental POD.
fn snapshot_bases(traj: &moredwr::fom::Trajectory, n_u: usize, n_p: usize, count: usize) -> (PodBasis, PodBasis) {
    let (mut bu, mut bp) = (PodBasis::new(n_u, 1.0).unwrap(), PodBasis::new(n_p, 1.0).unwrap());
    for s in &traj.states[1..=count] {
        bu.push(&s.u).unwrap();
        bp.push(&s.p).unwrap();
    }
    (bu, bp)
}

#[test]
fn estimate_with_fom_dual_closes_the_goal_error() {
    let s = spec(ProblemKind::Mandel, "4x2", 20);
    let (_, ops) = s.build().unwrap();
    let grid = s.grid().unwrap();
    let solver = FomSolver::new(&ops, grid.k, &LinearSolverConfig::direct()).unwrap();
    let fom = run_primal_fom(&solver, &grid, StateVector::zeros(ops.n_u(), ops.n_p(), 0)).unwrap();
    let dual = run_dual_fom(&solver, &grid).unwrap();
    let j_fom = evaluate_goal(&fom, &grid, &ops.g_goal);
    for count in 1..=3 {
        let (pu, pp) = snapshot_bases(&fom, ops.n_u(), ops.n_p(), count);
        let (du, dp) = snapshot_bases(&fom, ops.n_u(), ops.n_p(), 1);
        let bases = ReducedBases { primal_u: pu, primal_p: pp, dual_u: du, dual_p: dp, version: 0 };
        let red = project_operators(&ops, &bases).unwrap();
        let primal = solve_primal_rom(&red, &grid).unwrap();
        let j_rom = reduced_goal(&red, &primal, &grid);
        let lifted = lift_trajectory(&primal, &bases.primal_u.modes, &bases.primal_p.modes).unwrap();
        let eta: f64 = estimate_elementwise_fom(&solver, &lifted, &dual).unwrap().iter().sum();
        let err = j_fom - j_rom;
        assert!((eta - err).abs() <= 1e-8 * err.abs(), "{count} snapshots: {eta} vs {err}");
    }
}

#[test]
fn full_bases_leave_nothing_to_estimate() {
    let s = spec(ProblemKind::Mandel, "10x2", 20);
    let (_, ops) = s.build().unwrap();
    let grid = s.grid().unwrap();
    let solver = FomSolver::new(&ops, grid.k, &LinearSolverConfig::direct()).unwrap();
    let fom = run_primal_fom(&solver, &grid, StateVector::zeros(ops.n_u(), ops.n_p(), 0)).unwrap();
    let j_fom = evaluate_goal(&fom, &grid, &ops.g_goal);
    let identity = |n: usize| {
        let mut b = PodBasis::new(n, 1.0).unwrap();
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            b.push(&e).unwrap();
        }
        b
    };
    let bases = ReducedBases { primal_u: identity(ops.n_u()), primal_p: identity(ops.n_p()), dual_u: identity(ops.n_u()), dual_p: identity(ops.n_p()), version: 0 };
    assert_eq!(bases.sizes(), [ops.n_u(), ops.n_p(), ops.n_u(), ops.n_p()]);
    let red = project_operators(&ops, &bases).unwrap();
    let primal = solve_primal_rom(&red, &grid).unwrap();
    let dual = solve_dual_rom(&red, &grid).unwrap();
    let eta: f64 = estimate_elementwise(&red, &primal, &dual, &grid).unwrap().iter().sum();
    assert!(eta.abs() <= 1e-10 * j_fom.abs(), "eta {eta:e}");
    assert!((reduced_goal(&red, &primal, &grid) - j_fom).abs() <= 1e-10 * j_fom.abs());
}

#[test]
fn adaptive_run_on_desk_mandel() {
    let s = spec(ProblemKind::Mandel, "4x2", 20);
    let (_, ops) = s.build().unwrap();
    let grid = s.grid().unwrap();
    let solver = FomSolver::new(&ops, grid.k, &LinearSolverConfig::direct()).unwrap();
    let fom = run_primal_fom(&solver, &grid, StateVector::zeros(ops.n_u(), ops.n_p(), 0)).unwrap();
    let reference = Reference { goal: evaluate_goal(&fom, &grid, &ops.g_goal), wall_time: fom.wall_time };
    let out = run_moredwr(&ops, &grid, &LinearSolverConfig::direct(), &s.moredwr, Some(reference)).unwrap();
    let r = &out.record;
    assert_eq!(r.status, RunStatus::Converged);
    assert!(r.iterations.last().unwrap().eta_rel.abs() < 0.01);
    assert!(r.true_error_rel().unwrap() < 0.015);
    assert!(moredwr::adaptive::sizes_nondecreasing(&r.iterations));
    let logged: Vec<usize> = r.iterations.iter().map(|l| l.fom_solves).collect();
    assert!(logged.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*logged.last().unwrap(), r.fom_solves.total());
}

#[test]
fn adaptive_run_on_small_footing_with_gmres() {
    let s = spec(ProblemKind::Footing, "4x4x4", 30);
    let (_, ops) = s.build().unwrap();
    let grid = s.grid().unwrap();
    let solver = FomSolver::new(&ops, grid.k, &LinearSolverConfig::direct()).unwrap();
    let fom = run_primal_fom(&solver, &grid, StateVector::zeros(ops.n_u(), ops.n_p(), 0)).unwrap();
    let j_fom = evaluate_goal(&fom, &grid, &ops.g_goal);
    let config = MoreDwrConfig { tol_rel: 0.01, ..MoreDwrConfig::for_problem(ProblemKind::Footing) };
    let reference = Reference { goal: j_fom, wall_time: fom.wall_time };
    let out = run_moredwr(&ops, &grid, &LinearSolverConfig::gmres(), &config, Some(reference)).unwrap();
    assert!(out.record.converged());
    assert!(out.record.true_error_rel().unwrap() < 0.02);
    assert_eq!(out.record.fom_solves.extra_dual, 8 * 5);
}

#[test]
fn time_grid_matches_spec_defaults() {
    let g = ProblemSpec::defaults(ProblemKind::Mandel).grid().unwrap();
    assert_eq!(g.num_elements, 5000);
    assert_eq!(g.k, 1000.0);
    assert_eq!(TimeGrid::new(0.0, 5e6, 5000).unwrap(), g);
}
