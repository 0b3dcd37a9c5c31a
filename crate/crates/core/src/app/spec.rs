//! Problem catalog and the key=value configuration format.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::adaptive::MoreDwrConfig;
use crate::assembly::{assemble_problem, BlockOperators, MaterialParams};
use crate::discretization::{build_structured_mesh, build_taylor_hood_space, tag_boundaries, ProblemKind, TaylorHoodSpace};
use crate::error::{Error, Result};
use crate::fom::TimeGrid;
use crate::linsolve::{LinearSolverConfig, Preconditioner, SolverMethod};

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub origin: Vec<f64>,
    /// Edge lengths of the box.
    pub extent: Vec<f64>,
    pub cells: Vec<usize>,
    pub material: MaterialParams,
    pub t_end: f64,
    pub steps: usize,
    pub solver: LinearSolverConfig,
    pub moredwr: MoreDwrConfig,
}

impl ProblemSpec {
    pub fn defaults(kind: ProblemKind) -> Self {
        let (origin, extent, cells) = match kind {
            ProblemKind::Mandel => (vec![0.0, 0.0], vec![100.0, 20.0], vec![80, 16]),
            ProblemKind::Footing => (vec![-32.0, -32.0, 0.0], vec![64.0; 3], vec![16; 3]),
        };
        Self {
            kind,
            origin,
            extent,
            cells,
            material: MaterialParams::default(),
            t_end: 5e6,
            steps: 5000,
            solver: LinearSolverConfig::direct(),
            moredwr: MoreDwrConfig::for_problem(kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.kind.spatial_dim();
        if self.origin.len() != dim || self.extent.len() != dim || self.cells.len() != dim {
            return Err(Error::invalid(format!("{} needs {dim} entries for origin, extent and cells", self.kind.name())));
        }
        if self.cells.contains(&0) {
            return Err(Error::invalid("cell counts must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::invalid(format!("t_end must be positive, got {}", self.t_end)));
        }
        self.material.validate()?;
        self.solver.validate()?;
        self.moredwr.validate()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.t_end, self.steps)
    }

    pub fn build(&self) -> Result<(TaylorHoodSpace, BlockOperators)> {
        self.validate()?;
        let mesh = build_structured_mesh(&self.origin, &self.extent, &self.cells)?;
        let space = build_taylor_hood_space(tag_boundaries(mesh, self.kind)?);
        let ops = assemble_problem(&space, &self.material, self.kind)?;
        Ok((space, ops))
    }

    pub fn cells_label(&self) -> String {
        self.cells.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x")
    }

    /// Every setting as `key = value` lines, readable by [`ProblemSpec::parse`].
    pub fn to_config(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// The settings that determine the full-order problem; the `moredwr.*` section is excluded.
    pub fn identity(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| !k.starts_with("moredwr."))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let m = &self.material;
        let s = &self.solver;
        let d = &self.moredwr;
        vec![
            ("problem", self.kind.name().to_string()),
            ("mesh.origin", list(&self.origin)),
            ("mesh.extent", list(&self.extent)),
            ("mesh.cells", self.cells_label()),
            ("time.t_end", format!("{:e}", self.t_end)),
            ("time.steps", self.steps.to_string()),
            ("material.compressibility_modulus", format!("{:e}", m.compressibility_modulus)),
            ("material.biot_alpha", format!("{:e}", m.biot_alpha)),
            ("material.permeability", format!("{:e}", m.permeability)),
            ("material.viscosity", format!("{:e}", m.viscosity)),
            ("material.lame_mu", format!("{:e}", m.lame_mu)),
            ("material.lame_lambda", format!("{:e}", m.lame_lambda)),
            ("material.traction", format!("{:e}", m.traction)),
            ("material.density", format!("{:e}", m.density)),
            ("solver.method", method_name(s.method).to_string()),
            ("solver.preconditioner", preconditioner_name(s.preconditioner).to_string()),
            ("solver.tol", format!("{:e}", s.gmres_tolerance)),
            ("solver.restart", s.gmres_restart.to_string()),
            ("solver.max_iterations", s.max_iterations.to_string()),
            ("moredwr.tol_rel", format!("{:e}", d.tol_rel)),
            ("moredwr.energy_primal_u", format!("{:e}", d.energy_primal_u)),
            ("moredwr.energy_primal_p", format!("{:e}", d.energy_primal_p)),
            ("moredwr.energy_dual_u", format!("{:e}", d.energy_dual_u)),
            ("moredwr.energy_dual_p", format!("{:e}", d.energy_dual_p)),
            ("moredwr.extra_dual_iterations", d.extra_dual_iterations.to_string()),
            ("moredwr.extra_dual_steps", d.extra_dual_steps.to_string()),
            ("moredwr.max_iterations", d.max_iterations.map_or("auto".into(), |v| v.to_string())),
            ("moredwr.min_iterations", d.min_iterations.to_string()),
        ]
    }

    /// Parses a config text. `kind` is used unless the text sets `problem`.
    /// Lines are `key = value`; `#` starts a comment; `[section]` headers prefix the following keys.
    pub fn parse(text: &str, kind: Option<ProblemKind>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| config_err(line, "unterminated section header"))?.trim();
                section = if name.is_empty() { String::new() } else { format!("{name}.") };
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| config_err(line, format!("expected key = value, got '{content}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(config_err(line, "empty key"));
            }
            entries.push((line, format!("{section}{k}"), v.to_string()));
        }

        let mut from_text: Option<ProblemKind> = None;
        for (line, k, v) in &entries {
            if k == "problem" {
                let parsed = ProblemKind::from_str(v).map_err(|e| config_err(*line, e.to_string()))?;
                if from_text.is_some_and(|p| p != parsed) || kind.is_some_and(|p| p != parsed) {
                    return Err(config_err(*line, format!("conflicting problem '{}'", parsed.name())));
                }
                from_text = Some(parsed);
            }
        }
        let kind = from_text.or(kind);
        let kind = kind.ok_or_else(|| config_err(0, "no problem given (set `problem` or pass --problem)"))?;
        let mut spec = Self::defaults(kind);
        for (line, k, v) in &entries {
            spec.set(k, v).map_err(|e| match e {
                Error::Config { .. } => e,
                other => config_err(*line, other.to_string()),
            })?;
        }
        spec.validate().map_err(|e| config_err(0, e.to_string()))?;
        Ok(spec)
    }

    /// Applies one setting. Short aliases: `cells`, `steps`, `tol`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.material;
        let d = &mut self.moredwr;
        let s = &mut self.solver;
        match key {
            "problem" => {
                let kind = ProblemKind::from_str(value)?;
                if kind != self.kind {
                    return Err(Error::invalid(format!("problem is already {}", self.kind.name())));
                }
            }
            "mesh.origin" => self.origin = parse_list(value)?,
            "mesh.extent" => self.extent = parse_list(value)?,
            "mesh.cells" | "cells" => self.cells = parse_cells(value)?,
            "time.t_end" => self.t_end = num(value)?,
            "time.steps" | "steps" => self.steps = int(value)?,
            "material.compressibility_modulus" => m.compressibility_modulus = num(value)?,
            "material.biot_alpha" => m.biot_alpha = num(value)?,
            "material.permeability" => m.permeability = num(value)?,
            "material.viscosity" => m.viscosity = num(value)?,
            "material.lame_mu" => m.lame_mu = num(value)?,
            "material.lame_lambda" => m.lame_lambda = num(value)?,
            "material.traction" => m.traction = num(value)?,
            "material.density" => m.density = num(value)?,
            "solver.method" => s.method = parse_method(value)?,
            "solver.preconditioner" => s.preconditioner = parse_preconditioner(value)?,
            "solver.tol" => s.gmres_tolerance = num(value)?,
            "solver.restart" => s.gmres_restart = int(value)?,
            "solver.max_iterations" => s.max_iterations = int(value)?,
            "moredwr.tol_rel" | "tol" => d.tol_rel = num(value)?,
            "moredwr.energy_primal_u" => d.energy_primal_u = num(value)?,
            "moredwr.energy_primal_p" => d.energy_primal_p = num(value)?,
            "moredwr.energy_dual_u" => d.energy_dual_u = num(value)?,
            "moredwr.energy_dual_p" => d.energy_dual_p = num(value)?,
            "moredwr.extra_dual_iterations" => d.extra_dual_iterations = int(value)?,
            "moredwr.extra_dual_steps" => d.extra_dual_steps = int(value)?,
            "moredwr.max_iterations" => d.max_iterations = if value == "auto" { None } else { Some(int(value)?) },
            "moredwr.min_iterations" => d.min_iterations = int(value)?,
            other => return Err(Error::invalid(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config { line, message: message.into() }
}

fn num(v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::invalid(format!("'{v}' is not a number")))
}

fn int(v: &str) -> Result<usize> {
    v.parse::<usize>().map_err(|_| Error::invalid(format!("'{v}' is not a nonnegative integer")))
}

fn parse_list(v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| num(x.trim())).collect()
}

pub fn parse_cells(v: &str) -> Result<Vec<usize>> {
    v.split(['x', 'X']).map(|x| int(x.trim())).collect()
}

pub fn parse_method(v: &str) -> Result<SolverMethod> {
    match v.to_ascii_lowercase().as_str() {
        "direct" => Ok(SolverMethod::Direct),
        "gmres" => Ok(SolverMethod::Gmres),
        other => Err(Error::invalid(format!("unknown solver '{other}'"))),
    }
}

fn method_name(m: SolverMethod) -> &'static str {
    match m {
        SolverMethod::Direct => "direct",
        SolverMethod::Gmres => "gmres",
    }
}

fn parse_preconditioner(v: &str) -> Result<Preconditioner> {
    match v.to_ascii_lowercase().as_str() {
        "none" => Ok(Preconditioner::None),
        "jacobi" => Ok(Preconditioner::Jacobi),
        "split_jacobi" => Ok(Preconditioner::SplitJacobi),
        other => Err(Error::invalid(format!("unknown preconditioner '{other}'"))),
    }
}

fn preconditioner_name(p: Preconditioner) -> &'static str {
    match p {
        Preconditioner::None => "none",
        Preconditioner::Jacobi => "jacobi",
        Preconditioner::SplitJacobi => "split_jacobi",
    }
}
