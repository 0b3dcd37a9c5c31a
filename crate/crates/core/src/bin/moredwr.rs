use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moredwr::app::{self, ProblemSpec};
use moredwr::discretization::ProblemKind;
use moredwr::{Error, Result};

#[derive(Parser)]
#[command(name = "moredwr", version, about = "Biot poroelasticity: full-order runs and goal-oriented adaptive POD reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full-order primal run.
    Fom(ProblemArgs),
    /// Adaptive reduced run driven by the dual-weighted error estimate.
    Moredwr(MoreDwrArgs),
    /// Tabulate several reduced-run reports of the same problem.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the table as CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cells per axis, e.g. 80x16 or 8x8x8.
    #[arg(long)]
    cells: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    /// direct or gmres.
    #[arg(long)]
    solver: Option<String>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    overrides: Vec<String>,
}

#[derive(Args)]
struct MoreDwrArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    tol: Option<f64>,
    /// Report directory of a matching `fom` run.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    no_extra_dual_enrichment: bool,
    #[arg(long)]
    min_iterations: Option<usize>,
}

fn override_err(message: String) -> Error {
    Error::Config { line: 0, message }
}

impl ProblemArgs {
    fn spec(&self) -> Result<ProblemSpec> {
        let text = match &self.config {
            Some(path) => std::fs::read_to_string(path).map_err(|e| override_err(format!("cannot read {}: {e}", path.display())))?,
            None => String::new(),
        };
        let mut spec = ProblemSpec::parse(&text, self.problem)?;
        for item in &self.overrides {
            let (k, v) = item.split_once('=').ok_or_else(|| override_err(format!("override '{item}' is not key=value")))?;
            spec.set(k.trim(), v.trim()).map_err(|e| override_err(e.to_string()))?;
        }
        if let Some(c) = &self.cells {
            spec.cells = app::parse_cells(c).map_err(|e| override_err(e.to_string()))?;
        }
        if let Some(s) = self.steps {
            spec.steps = s;
        }
        if let Some(s) = &self.solver {
            spec.solver.method = app::parse_method(s).map_err(|e| override_err(e.to_string()))?;
        }
        Ok(spec)
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Fom(args) => {
            let spec = args.spec()?;
            spec.validate().map_err(|e| override_err(e.to_string()))?;
            let b = app::cmd_fom(&spec, args.out.as_deref())?;
            println!("J = {:.16e}  ({} + {} dofs, {:.3} s)", b.goal, b.n_u, b.n_p, b.wall_time.as_secs_f64());
            Ok(app::EXIT_OK)
        }
        Command::Moredwr(args) => {
            let mut spec = args.problem.spec()?;
            if let Some(t) = args.tol {
                spec.moredwr.tol_rel = t;
            }
            if args.no_extra_dual_enrichment {
                spec.moredwr.extra_dual_iterations = 0;
            }
            if let Some(m) = args.min_iterations {
                spec.moredwr.min_iterations = m;
            }
            spec.validate().map_err(|e| override_err(e.to_string()))?;
            let reference = args.reference.as_deref().map(app::read_fom).transpose()?;
            let b = app::cmd_moredwr(&spec, reference.as_ref(), args.problem.out.as_deref())?;
            let r = &b.record;
            let eta_rel = r.final_estimate.as_ref().map_or(0.0, |e| e.eta_rel);
            println!(
                "{:?} after {} iterations: J_rom = {:.16e}, eta_rel = {:.3e}, fom solves = {}, sizes = {:?}",
                r.status,
                r.iterations.len(),
                r.j_rom,
                eta_rel,
                r.fom_solves.total(),
                r.basis_sizes
            );
            if let (Some(e), Some(s)) = (r.true_error_rel(), r.speedup()) {
                println!("e_rel = {e:.3e}, speedup = {s:.2}, I_eff = {:?}, I_ind = {:?}", r.i_eff(), r.i_ind());
            }
            Ok(if r.converged() { app::EXIT_OK } else { app::EXIT_NOT_CONVERGED })
        }
        Command::Compare { reports, out } => {
            let cmp = app::cmd_compare(&reports, out.as_deref())?;
            print!("{}", cmp.text);
            Ok(app::EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    app::configure_threads();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            app::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
