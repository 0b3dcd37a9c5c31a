//! The MORe DWR loop: reduced primal/dual sweeps, error estimation, and local
//! full-order enrichment on the worst time element until the estimate meets the tolerance.

use std::time::{Duration, Instant};

use faer::Mat;

use crate::assembly::BlockOperators;
use crate::discretization::ProblemKind;
use crate::error::{Error, Result};
use crate::estimator::{estimate_elementwise, EstimateReport};
use crate::fom::{FomSolver, StateVector, TimeGrid};
use crate::linsolve::LinearSolverConfig;
use crate::pod::ipod_update;
use crate::rom::{lift_state, project_operators, reduced_goal, reduced_goal_integrands, solve_dual_rom, solve_primal_rom, ReducedBases, ReducedTrajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct MoreDwrConfig {
    pub tol_rel: f64,
    pub energy_primal_u: f64,
    pub energy_primal_p: f64,
    pub energy_dual_u: f64,
    pub energy_dual_p: f64,
    /// The first this-many iterations also run the extra dual enrichment.
    pub extra_dual_iterations: usize,
    /// Number of chained dual steps ending at `t_0`.
    pub extra_dual_steps: usize,
    /// `None` means the number of time elements.
    pub max_iterations: Option<usize>,
    pub min_iterations: usize,
}

impl Default for MoreDwrConfig {
    fn default() -> Self {
        Self {
            tol_rel: 0.01,
            energy_primal_u: 1.0 - 1e-7,
            energy_primal_p: 1.0 - 1e-11,
            energy_dual_u: 1.0 - 1e-9,
            energy_dual_p: 1.0 - 1e-9,
            extra_dual_iterations: 5,
            extra_dual_steps: 5,
            max_iterations: None,
            min_iterations: 0,
        }
    }
}

impl MoreDwrConfig {
    pub fn for_problem(kind: ProblemKind) -> Self {
        let extra_dual_iterations = match kind {
            ProblemKind::Mandel => 5,
            ProblemKind::Footing => 8,
        };
        Self { extra_dual_iterations, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_rel > 0.0) {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tol_rel)));
        }
        for (name, e) in [
            ("energy_primal_u", self.energy_primal_u),
            ("energy_primal_p", self.energy_primal_p),
            ("energy_dual_u", self.energy_dual_u),
            ("energy_dual_p", self.energy_dual_p),
        ] {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {e}")));
            }
        }
        if self.max_iterations == Some(0) {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }

    fn energies(&self) -> [f64; 4] {
        [self.energy_primal_u, self.energy_primal_p, self.energy_dual_u, self.energy_dual_p]
    }
}

/// Full-order step solves, split by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FomCounter {
    pub initialization: usize,
    pub enrichment: usize,
    pub extra_dual: usize,
}

impl FomCounter {
    pub fn total(&self) -> usize {
        self.initialization + self.enrichment + self.extra_dual
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub eta_rel: f64,
    /// `|J_fom − J_rom| / |J_fom|` when a reference goal is known.
    pub true_error_rel: Option<f64>,
    /// Element (1-based) where the next enrichment happens; `None` on the last iteration.
    pub enriched_element: Option<usize>,
    /// `[N^u_primal, N^p_primal, N^u_dual, N^p_dual]` used for this iteration's sweeps.
    pub basis_sizes: [usize; 4],
    /// Cumulative, including this iteration's enrichment.
    pub fom_solves: usize,
    /// Elapsed since the start of the run.
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    /// The primal data vanish; the reduced solution is exactly zero.
    Trivial,
    MaxIterations,
}

/// Reference full-order data for true-error columns and the speedup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub goal: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub status: RunStatus,
    pub iterations: Vec<IterationLog>,
    pub fom_solves: FomCounter,
    pub wall_time: Duration,
    /// Estimate of the final reduced solution; `None` for trivial runs.
    pub final_estimate: Option<EstimateReport>,
    pub j_rom: f64,
    /// `gᵀp_m` of the final reduced solution, `m = 1..=M`.
    pub goal_integrands: Vec<f64>,
    pub basis_sizes: [usize; 4],
    pub reference: Option<Reference>,
}

impl RunRecord {
    pub fn converged(&self) -> bool {
        self.status != RunStatus::MaxIterations
    }

    pub fn speedup(&self) -> Option<f64> {
        let r = self.reference?;
        Some(r.wall_time.as_secs_f64() / self.wall_time.as_secs_f64().max(1e-12))
    }

    pub fn true_error_rel(&self) -> Option<f64> {
        let r = self.reference?;
        if r.goal == 0.0 {
            return (self.j_rom == 0.0).then_some(0.0);
        }
        Some(((r.goal - self.j_rom) / r.goal).abs())
    }

    pub fn i_eff(&self) -> Option<f64> {
        self.final_estimate.as_ref()?.i_eff
    }

    pub fn i_ind(&self) -> Option<f64> {
        self.final_estimate.as_ref()?.i_ind
    }
}

#[derive(Debug, Clone)]
pub struct MoreDwrOutcome {
    pub record: RunRecord,
    pub bases: ReducedBases,
    pub primal: ReducedTrajectory,
    pub dual: ReducedTrajectory,
}

fn column(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn columns(vs: &[&[f64]]) -> Mat<f64> {
    Mat::from_fn(vs.first().map_or(0, |v| v.len()), vs.len(), |i, j| vs[j][i])
}

fn push_primal(bases: &mut ReducedBases, s: &StateVector) -> Result<()> {
    ipod_update(&mut bases.primal_u, &column(&s.u))?;
    ipod_update(&mut bases.primal_p, &column(&s.p))
}

fn push_dual(bases: &mut ReducedBases, s: &StateVector) -> Result<()> {
    ipod_update(&mut bases.dual_u, &column(&s.u))?;
    ipod_update(&mut bases.dual_p, &column(&s.p))
}

/// One primal step from zero on the first element and one dual step from `z_M = 0`.
/// Returns the primal snapshot so callers can detect vanishing data.
pub fn initialize_bases(solver: &FomSolver, grid: &TimeGrid, bases: &mut ReducedBases, counter: &mut FomCounter) -> Result<StateVector> {
    if bases.sizes() != [0; 4] {
        return Err(Error::invalid("bases are already initialized"));
    }
    let (nu, np) = (solver.ops.n_u(), solver.ops.n_p());
    let primal = solver.primal_step(&StateVector::zeros(nu, np, 0))?;
    let dual = solver.dual_step(&StateVector::zeros(nu, np, grid.num_elements))?;
    counter.initialization += 2;
    push_primal(bases, &primal)?;
    push_dual(bases, &dual)?;
    bases.version += 1;
    Ok(primal)
}

/// Local full-order solves on element `m_max` started from the lifted reduced states.
pub fn enrich_at(solver: &FomSolver, bases: &mut ReducedBases, primal: &ReducedTrajectory, dual: &ReducedTrajectory, m_max: usize, counter: &mut FomCounter) -> Result<()> {
    if m_max == 0 || m_max >= primal.len() || m_max >= dual.len() {
        return Err(Error::invalid(format!("enrichment element {m_max} outside 1..={}", primal.len().saturating_sub(1))));
    }
    let start_p = lift_state(primal, m_max - 1, &bases.primal_u.modes, &bases.primal_p.modes)?;
    let start_d = lift_state(dual, m_max, &bases.dual_u.modes, &bases.dual_p.modes)?;
    let u = solver.primal_step(&start_p)?;
    let z = solver.dual_step(&start_d)?;
    counter.enrichment += 2;
    push_primal(bases, &u)?;
    push_dual(bases, &z)?;
    bases.version += 1;
    Ok(())
}

/// Chained dual steps from `start` (a lifted reduced `z_ℓ`) down to `z_0`, fed to the dual bases as one bunch.
pub fn extra_dual_enrichment(solver: &FomSolver, bases: &mut ReducedBases, start: StateVector, counter: &mut FomCounter) -> Result<()> {
    let ell = start.time_index;
    if ell == 0 {
        return Ok(());
    }
    let mut z = start;
    let mut snaps = Vec::with_capacity(ell);
    for _ in 0..ell {
        z = solver.dual_step(&z)?;
        counter.extra_dual += 1;
        snaps.push(z.clone());
    }
    let us: Vec<&[f64]> = snaps.iter().map(|s| s.u.as_slice()).collect();
    let ps: Vec<&[f64]> = snaps.iter().map(|s| s.p.as_slice()).collect();
    ipod_update(&mut bases.dual_u, &columns(&us))?;
    ipod_update(&mut bases.dual_p, &columns(&ps))?;
    bases.version += 1;
    Ok(())
}

/// Runs the adaptive loop. Reaching `max_iterations` is reported through the status, not as an error.
pub fn run_moredwr(ops: &BlockOperators, grid: &TimeGrid, solver_config: &LinearSolverConfig, config: &MoreDwrConfig, reference: Option<Reference>) -> Result<MoreDwrOutcome> {
    config.validate()?;
    if grid.num_elements == 0 {
        return Err(Error::invalid("the time grid has no elements"));
    }
    let start = Instant::now();
    let solver = FomSolver::new(ops, grid.k, solver_config)?;
    let mut bases = ReducedBases::new(ops.n_u(), ops.n_p(), config.energies())?;
    let mut counter = FomCounter::default();
    let first = initialize_bases(&solver, grid, &mut bases, &mut counter)?;
    let max_iterations = config.max_iterations.unwrap_or(grid.num_elements);

    if first.is_zero() {
        log::info!("primal data vanish; reduced solution is zero");
        let red = project_operators(ops, &bases)?;
        let primal = solve_primal_rom(&red, grid)?;
        let dual = solve_dual_rom(&red, grid)?;
        let record = RunRecord {
            status: RunStatus::Trivial,
            iterations: Vec::new(),
            fom_solves: counter,
            wall_time: start.elapsed(),
            final_estimate: None,
            j_rom: 0.0,
            goal_integrands: vec![0.0; grid.num_elements],
            basis_sizes: bases.sizes(),
            reference,
        };
        return Ok(MoreDwrOutcome { record, bases, primal, dual });
    }

    let mut logs = Vec::new();
    let mut iteration = 0;
    loop {
        iteration += 1;
        let t0 = Instant::now();
        let red = project_operators(ops, &bases)?;
        let t1 = Instant::now();
        let primal = solve_primal_rom(&red, grid)?;
        let dual = solve_dual_rom(&red, grid)?;
        let t2 = Instant::now();
        let j_rom = reduced_goal(&red, &primal, grid);
        let eta_m = estimate_elementwise(&red, &primal, &dual, grid)?;
        log::debug!(
            "projection {:.3} s, reduced sweeps {:.3} s, estimate {:.3} s",
            (t1 - t0).as_secs_f64(),
            (t2 - t1).as_secs_f64(),
            t2.elapsed().as_secs_f64()
        );
        let report = EstimateReport::new(eta_m, j_rom, reference.map(|r| r.goal))?;
        let sizes = bases.sizes();
        // Estimates made before the extra dual enrichment phase is over rest on dual bases
        // that miss the early-time adjoint and are not accepted as a stopping signal.
        let trusted = config.extra_dual_steps == 0 || iteration > config.extra_dual_iterations;
        let done = trusted && report.eta_rel.abs() < config.tol_rel && iteration >= config.min_iterations;
        let status = if done {
            Some(RunStatus::Converged)
        } else if iteration >= max_iterations {
            Some(RunStatus::MaxIterations)
        } else {
            None
        };

        let mut enriched_element = None;
        if status.is_none() {
            // Lifted before the bases change.
            let extra_start = if iteration <= config.extra_dual_iterations {
                let ell = config.extra_dual_steps.min(grid.num_elements);
                Some(lift_state(&dual, ell, &bases.dual_u.modes, &bases.dual_p.modes)?)
            } else {
                None
            };
            enrich_at(&solver, &mut bases, &primal, &dual, report.argmax, &mut counter)?;
            if let Some(start) = extra_start {
                extra_dual_enrichment(&solver, &mut bases, start, &mut counter)?;
            }
            enriched_element = Some(report.argmax);
        }
        let log = IterationLog {
            iteration,
            eta_rel: report.eta_rel,
            true_error_rel: report.true_relative_error(),
            enriched_element,
            basis_sizes: sizes,
            fom_solves: counter.total(),
            wall_time: start.elapsed(),
        };
        log::info!(
            "iteration {iteration}: eta_rel {:.4e}, sizes {:?}, fom solves {}",
            log.eta_rel,
            log.basis_sizes,
            log.fom_solves
        );
        logs.push(log);

        if let Some(status) = status {
            if status == RunStatus::MaxIterations {
                log::warn!("no convergence after {iteration} iterations, eta_rel {:.4e}", report.eta_rel);
            }
            let record = RunRecord {
                status,
                iterations: logs,
                fom_solves: counter,
                wall_time: start.elapsed(),
                goal_integrands: reduced_goal_integrands(&red, &primal),
                j_rom,
                final_estimate: Some(report),
                basis_sizes: sizes,
                reference,
            };
            return Ok(MoreDwrOutcome { record, bases, primal, dual });
        }
    }
}

/// True when no basis shrinks from one logged iteration to the next.
pub fn sizes_nondecreasing(logs: &[IterationLog]) -> bool {
    logs.windows(2).all(|w| (0..4).all(|i| w[0].basis_sizes[i] <= w[1].basis_sizes[i]))
}
