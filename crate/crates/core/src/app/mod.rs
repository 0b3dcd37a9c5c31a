//! Command implementations behind the `moredwr` binary and their on-disk reports.
//!
//! A report directory holds `spec.conf` (the full problem setup), `summary.csv`,
//! `goal_trajectory.csv` and, for reduced runs, `iterations.csv`.

mod csv;
mod spec;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

pub use spec::{parse_cells, parse_method, ProblemSpec};

use crate::adaptive::{run_moredwr, Reference, RunRecord, RunStatus};
use crate::error::{Error, Result};
use crate::fom::{goal_integrands, run_primal_fom, FomSolver, StateVector};
use crate::linsolve::SolverMethod;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::Report(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_FAILURE,
        _ => EXIT_SOLVER,
    }
}

/// Reads `MOREDWR_THREADS` and sets the dense-kernel parallelism; unset or 1 means sequential.
pub fn configure_threads() {
    let Ok(value) = std::env::var("MOREDWR_THREADS") else {
        faer::set_global_parallelism(faer::Par::Seq);
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(0) | Ok(1) => faer::set_global_parallelism(faer::Par::Seq),
        Ok(n) => faer::set_global_parallelism(faer::Par::rayon(n)),
        Err(_) => log::warn!("ignoring MOREDWR_THREADS={value}"),
    }
}

const SPEC_FILE: &str = "spec.conf";
const SUMMARY_FILE: &str = "summary.csv";
const GOAL_FILE: &str = "goal_trajectory.csv";
const ITERATIONS_FILE: &str = "iterations.csv";

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct FomBundle {
    pub spec: ProblemSpec,
    pub n_u: usize,
    pub n_p: usize,
    pub goal: f64,
    /// `gᵀp_m`, `m = 1..=M`.
    pub integrands: Vec<f64>,
    /// Factorization plus the time sweep.
    pub wall_time: Duration,
    pub mean_gmres_iterations: Option<f64>,
}

impl FomBundle {
    pub fn reference(&self) -> Reference {
        Reference { goal: self.goal, wall_time: self.wall_time }
    }
}

/// Full-order primal run; writes a report when `out` is given.
pub fn cmd_fom(spec: &ProblemSpec, out: Option<&Path>) -> Result<FomBundle> {
    let (_, ops) = spec.build()?;
    let grid = spec.grid()?;
    let start = Instant::now();
    let solver = FomSolver::new(&ops, grid.k, &spec.solver)?;
    let traj = run_primal_fom(&solver, &grid, StateVector::zeros(ops.n_u(), ops.n_p(), 0))?;
    let wall_time = start.elapsed();
    let integrands = goal_integrands(&traj, &ops.g_goal);
    let bundle = FomBundle {
        spec: spec.clone(),
        n_u: ops.n_u(),
        n_p: ops.n_p(),
        goal: integrands.iter().map(|v| grid.k * v).sum(),
        integrands,
        wall_time,
        mean_gmres_iterations: (spec.solver.method == SolverMethod::Gmres).then(|| solver.linear_solver().mean_gmres_iterations()),
    };
    log::info!("fom: J = {:.6e}, {:.2} s", bundle.goal, wall_time.as_secs_f64());
    if let Some(dir) = out {
        write_fom(dir, &bundle)?;
    }
    Ok(bundle)
}

fn write_fom(dir: &Path, b: &FomBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SPEC_FILE), b.spec.to_config())?;
    let grid = b.spec.grid()?;
    let rows = b.integrands.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), fmt(grid.time(i + 1)), fmt(*v)]);
    csv::write(&dir.join(GOAL_FILE), &["m", "t", "fom"], rows)?;
    let row = vec![
        b.spec.kind.name().to_string(),
        b.spec.cells_label(),
        b.spec.steps.to_string(),
        b.n_u.to_string(),
        b.n_p.to_string(),
        fmt(b.goal),
        fmt(b.wall_time.as_secs_f64()),
        fmt_opt(b.mean_gmres_iterations),
    ];
    csv::write(
        &dir.join(SUMMARY_FILE),
        &["problem", "cells", "steps", "n_u", "n_p", "j_fom", "wall_time_s", "mean_gmres_iterations"],
        std::iter::once(row),
    )
}

/// Loads a full-order report written by [`cmd_fom`].
pub fn read_fom(dir: &Path) -> Result<FomBundle> {
    let spec = read_spec(dir)?;
    let summary = csv::read(&dir.join(SUMMARY_FILE))?;
    let row = summary.first().ok_or_else(|| Error::Report(format!("{} is empty", dir.join(SUMMARY_FILE).display())))?;
    let goal_rows = csv::read(&dir.join(GOAL_FILE))?;
    let integrands = goal_rows.iter().map(|r| csv::number(r, "fom")).collect::<Result<Vec<_>>>()?;
    let mean = csv::field(row, "mean_gmres_iterations")?;
    Ok(FomBundle {
        n_u: csv::number(row, "n_u")? as usize,
        n_p: csv::number(row, "n_p")? as usize,
        goal: csv::number(row, "j_fom")?,
        wall_time: Duration::from_secs_f64(csv::number(row, "wall_time_s")?),
        mean_gmres_iterations: if mean.is_empty() { None } else { Some(csv::number(row, "mean_gmres_iterations")?) },
        integrands,
        spec,
    })
}

fn read_spec(dir: &Path) -> Result<ProblemSpec> {
    let path = dir.join(SPEC_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Report(format!("cannot read {}: {e}", path.display())))?;
    ProblemSpec::parse(&text, None)
}

#[derive(Debug, Clone)]
pub struct MoreDwrBundle {
    pub spec: ProblemSpec,
    pub record: RunRecord,
}

/// Adaptive reduced run. With a reference report the true-error columns and the speedup are filled in.
pub fn cmd_moredwr(spec: &ProblemSpec, reference: Option<&FomBundle>, out: Option<&Path>) -> Result<MoreDwrBundle> {
    if let Some(r) = reference {
        if r.spec.identity() != spec.identity() {
            return Err(Error::Report("reference was computed for a different problem setup".into()));
        }
    }
    let (_, ops) = spec.build()?;
    let grid = spec.grid()?;
    let outcome = run_moredwr(&ops, &grid, &spec.solver, &spec.moredwr, reference.map(FomBundle::reference))?;
    let bundle = MoreDwrBundle { spec: spec.clone(), record: outcome.record };
    if let Some(dir) = out {
        write_moredwr(dir, &bundle, reference)?;
    }
    Ok(bundle)
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Converged => "converged",
        RunStatus::Trivial => "trivial",
        RunStatus::MaxIterations => "max_iterations",
    }
}

const SUMMARY_HEADER: [&str; 21] = [
    "problem",
    "cells",
    "steps",
    "tol_rel",
    "status",
    "iterations",
    "fom_solves",
    "rom_primal_u",
    "rom_primal_p",
    "rom_dual_u",
    "rom_dual_p",
    "j_rom",
    "eta",
    "eta_rel",
    "j_fom",
    "e_rel",
    "speedup",
    "i_eff",
    "i_ind",
    "wall_time_s",
    "fom_wall_time_s",
];

fn summary_row(b: &MoreDwrBundle) -> Vec<String> {
    let r = &b.record;
    let est = r.final_estimate.as_ref();
    let mut row = vec![
        b.spec.kind.name().to_string(),
        b.spec.cells_label(),
        b.spec.steps.to_string(),
        fmt(b.spec.moredwr.tol_rel),
        status_name(r.status).to_string(),
        r.iterations.len().to_string(),
        r.fom_solves.total().to_string(),
    ];
    row.extend(r.basis_sizes.iter().map(|s| s.to_string()));
    row.extend([
        fmt(r.j_rom),
        fmt_opt(est.map(|e| e.eta)),
        fmt_opt(est.map(|e| e.eta_rel)),
        fmt_opt(r.reference.map(|x| x.goal)),
        fmt_opt(r.true_error_rel()),
        fmt_opt(r.speedup()),
        fmt_opt(r.i_eff()),
        fmt_opt(r.i_ind()),
        fmt(r.wall_time.as_secs_f64()),
        fmt_opt(r.reference.map(|x| x.wall_time.as_secs_f64())),
    ]);
    row
}

fn write_moredwr(dir: &Path, b: &MoreDwrBundle, reference: Option<&FomBundle>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SPEC_FILE), b.spec.to_config())?;
    let grid = b.spec.grid()?;
    let r = &b.record;
    let fom = reference.map(|f| &f.integrands);
    let mut header = vec!["m", "t", "rom"];
    if fom.is_some() {
        header.push("fom");
    }
    let rows = r.goal_integrands.iter().enumerate().map(|(i, v)| {
        let mut row = vec![(i + 1).to_string(), fmt(grid.time(i + 1)), fmt(*v)];
        if let Some(f) = fom {
            row.push(fmt_opt(f.get(i).copied()));
        }
        row
    });
    csv::write(&dir.join(GOAL_FILE), &header, rows)?;

    let rows = r.iterations.iter().map(|l| {
        let mut row = vec![l.iteration.to_string(), fmt(l.eta_rel), fmt_opt(l.true_error_rel), l.enriched_element.map_or(String::new(), |m| m.to_string())];
        row.extend(l.basis_sizes.iter().map(|s| s.to_string()));
        row.extend([l.fom_solves.to_string(), fmt(l.wall_time.as_secs_f64())]);
        row
    });
    csv::write(
        &dir.join(ITERATIONS_FILE),
        &["iteration", "eta_rel", "e_rel", "enriched_element", "n_primal_u", "n_primal_p", "n_dual_u", "n_dual_p", "fom_solves", "wall_time_s"],
        rows,
    )?;
    csv::write(&dir.join(SUMMARY_FILE), &SUMMARY_HEADER, std::iter::once(summary_row(b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Summary rows ordered by increasing tolerance.
    pub rows: Vec<Vec<String>>,
    pub text: String,
}

/// Aligns the summaries of several reduced runs of the same problem.
pub fn cmd_compare(dirs: &[PathBuf], out: Option<&Path>) -> Result<Comparison> {
    if dirs.is_empty() {
        return Err(Error::Report("nothing to compare".into()));
    }
    let mut identity: Option<String> = None;
    let mut rows = Vec::new();
    for dir in dirs {
        let spec = read_spec(dir)?;
        match &identity {
            None => identity = Some(spec.identity()),
            Some(id) if *id != spec.identity() => {
                return Err(Error::Report(format!("{} was run on a different problem setup", dir.display())));
            }
            _ => {}
        }
        let summary = csv::read(&dir.join(SUMMARY_FILE))?;
        let row = summary.into_iter().next().ok_or_else(|| Error::Report(format!("{} has no summary", dir.display())))?;
        if row.len() != SUMMARY_HEADER.len() || csv::field(&row, "tol_rel").is_err() {
            return Err(Error::Report(format!("{} is not a reduced-run report", dir.display())));
        }
        let tol = csv::number(&row, "tol_rel")?;
        rows.push((tol, SUMMARY_HEADER.iter().map(|h| csv::field(&row, h).map(str::to_string)).collect::<Result<Vec<_>>>()?));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rows: Vec<Vec<String>> = rows.into_iter().map(|(_, r)| r).collect();
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        csv::write(path, &SUMMARY_HEADER, rows.iter().cloned())?;
    }
    let text = comparison_text(&rows);
    Ok(Comparison { rows, text })
}

fn comparison_text(rows: &[Vec<String>]) -> String {
    let col = |name: &str| SUMMARY_HEADER.iter().position(|h| *h == name).unwrap();
    let pct = |s: &str| s.parse::<f64>().map_or("-".to_string(), |v| format!("{:.3}", 100.0 * v));
    let short = |s: &str| s.parse::<f64>().map_or("-".to_string(), |v| format!("{v:.3}"));
    let mut out = format!(
        "{:>9} {:>9} {:>9} {:>8} {:>6} {:>20} {:>7} {:>7}\n",
        "tol[%]", "e_rel[%]", "eta[%]", "speedup", "fom", "rom size", "I_eff", "I_ind"
    );
    for r in rows {
        let sizes = format!("{} / {} + {} / {}", r[col("rom_primal_u")], r[col("rom_primal_p")], r[col("rom_dual_u")], r[col("rom_dual_p")]);
        out.push_str(&format!(
            "{:>9} {:>9} {:>9} {:>8} {:>6} {:>20} {:>7} {:>7}\n",
            pct(&r[col("tol_rel")]),
            pct(&r[col("e_rel")]),
            pct(&r[col("eta_rel")]),
            short(&r[col("speedup")]),
            r[col("fom_solves")],
            sizes,
            short(&r[col("i_eff")]),
            short(&r[col("i_ind")]),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::ProblemKind;

    fn desk(steps: usize) -> ProblemSpec {
        let mut s = ProblemSpec::defaults(ProblemKind::Mandel);
        s.set("cells", "4x2").unwrap();
        s.set("steps", &steps.to_string()).unwrap();
        s
    }

    #[test]
    fn single_step_fom_writes_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let b = cmd_fom(&desk(1), Some(dir.path())).unwrap();
        let rows = csv::read(&dir.path().join(GOAL_FILE)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(b.integrands.len(), 1);
        let back = read_fom(dir.path()).unwrap();
        assert_eq!(back.goal.to_bits(), b.goal.to_bits());
        assert_eq!(back.spec, b.spec);
        assert_eq!((back.n_u, back.n_p), (b.n_u, b.n_p));
    }

    #[test]
    fn direct_fom_reports_are_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        cmd_fom(&desk(12), Some(a.path())).unwrap();
        cmd_fom(&desk(12), Some(b.path())).unwrap();
        let read = |d: &Path| fs::read(d.join(GOAL_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn moredwr_with_and_without_reference() {
        let fom_dir = tempfile::tempdir().unwrap();
        let spec = desk(20);
        let fom = cmd_fom(&spec, Some(fom_dir.path())).unwrap();
        let out = tempfile::tempdir().unwrap();
        let with = cmd_moredwr(&spec, Some(&read_fom(fom_dir.path()).unwrap()), Some(out.path())).unwrap();
        assert!(with.record.true_error_rel().unwrap() < 0.015);
        let summary = csv::read(&out.path().join(SUMMARY_FILE)).unwrap();
        assert!(!csv::field(&summary[0], "e_rel").unwrap().is_empty());
        assert_eq!(csv::field(&summary[0], "status").unwrap(), "converged");
        let goal = csv::read(&out.path().join(GOAL_FILE)).unwrap();
        assert_eq!(goal.len(), 20);
        assert_eq!(csv::number(&goal[3], "fom").unwrap().to_bits(), fom.integrands[3].to_bits());
        let iters = csv::read(&out.path().join(ITERATIONS_FILE)).unwrap();
        assert_eq!(iters.len(), with.record.iterations.len());

        let bare = tempfile::tempdir().unwrap();
        cmd_moredwr(&spec, None, Some(bare.path())).unwrap();
        let summary = csv::read(&bare.path().join(SUMMARY_FILE)).unwrap();
        for col in ["e_rel", "i_eff", "i_ind", "speedup"] {
            assert!(csv::field(&summary[0], col).unwrap().is_empty());
        }
        assert!(!csv::field(&summary[0], "eta_rel").unwrap().is_empty());
    }

    #[test]
    fn mismatched_reference_is_refused() {
        let fom = cmd_fom(&desk(5), None).unwrap();
        assert!(matches!(cmd_moredwr(&desk(6), Some(&fom), None), Err(Error::Report(_))));
    }

    #[test]
    fn compare_orders_by_tolerance_and_guards_setup() {
        let root = tempfile::tempdir().unwrap();
        let mut dirs = Vec::new();
        for tol in ["0.2", "0.01", "0.05"] {
            let mut spec = desk(20);
            spec.set("tol", tol).unwrap();
            let d = root.path().join(format!("tol{tol}"));
            cmd_moredwr(&spec, None, Some(&d)).unwrap();
            dirs.push(d);
        }
        let table = root.path().join("cmp").join("comparison.csv");
        let cmp = cmd_compare(&dirs, Some(&table)).unwrap();
        let tols: Vec<f64> = cmp.rows.iter().map(|r| r[3].parse().unwrap()).collect();
        assert_eq!(tols, vec![0.01, 0.05, 0.2]);
        assert_eq!(cmp.text.lines().count(), 4);
        assert_eq!(csv::read(&table).unwrap().len(), 3);
        assert_eq!(cmd_compare(&dirs[..1], None).unwrap().rows.len(), 1);

        let other = root.path().join("other");
        cmd_moredwr(&desk(21), None, Some(&other)).unwrap();
        dirs.push(other);
        assert!(matches!(cmd_compare(&dirs, None), Err(Error::Report(_))));
        assert!(cmd_compare(&[], None).is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        assert_eq!(exit_code(&Error::Config { line: 1, message: String::new() }), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::FactorizationFailure(String::new())), EXIT_SOLVER);
        assert_ne!(EXIT_SOLVER, EXIT_NOT_CONVERGED);
    }
}
