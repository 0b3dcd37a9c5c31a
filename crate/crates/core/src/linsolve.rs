//! Linear solvers for the monolithic step systems: sparse LU and restarted GMRES.

use std::sync::atomic::{AtomicUsize, Ordering};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::Mat;

use crate::error::{Error, Result};
use crate::sparse::{norm2, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Direct,
    Gmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    /// Left diagonal scaling `D⁻¹A`.
    Jacobi,
    /// Split diagonal scaling `sign(D)|D|^{-1/2} A |D|^{-1/2}`; balances rows and
    /// columns when displacement and pressure unknowns differ by many orders of magnitude.
    SplitJacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolverConfig {
    pub method: SolverMethod,
    pub gmres_tolerance: f64,
    pub gmres_restart: usize,
    pub max_iterations: usize,
    pub preconditioner: Preconditioner,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Direct,
            gmres_tolerance: 5e-8,
            gmres_restart: 100,
            max_iterations: 5000,
            preconditioner: Preconditioner::SplitJacobi,
        }
    }
}

impl LinearSolverConfig {
    pub fn direct() -> Self {
        Self::default()
    }

    pub fn gmres() -> Self {
        Self { method: SolverMethod::Gmres, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gmres_tolerance > 0.0) {
            return Err(Error::invalid("gmres_tolerance must be positive"));
        }
        if self.gmres_restart == 0 {
            return Err(Error::invalid("gmres_restart must be at least 1"));
        }
        Ok(())
    }
}

/// Sparse LU factorization supporting repeated solves with the matrix and its transpose.
///
/// The matrix is equilibrated as `S A S` with `S = |diag A|^{-1/2}` before factorizing,
/// which keeps pivoting meaningful when row scales differ by many orders of magnitude.
pub struct Factorization {
    lu: Lu<usize, f64>,
    scale: Vec<f64>,
    n: usize,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.n).finish()
    }
}

pub fn factorize(matrix: &CsrMatrix) -> Result<Factorization> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::dims(format!("cannot factorize {}x{} matrix", matrix.nrows(), matrix.ncols())));
    }
    let n = matrix.nrows();
    let scale: Vec<f64> = matrix
        .diagonal()
        .iter()
        .map(|d| if *d != 0.0 && d.is_finite() { 1.0 / d.abs().sqrt() } else { 1.0 })
        .collect();
    let scaled = CsrMatrix::from_triplets(n, n, matrix.triplets().map(|(i, j, v)| (i, j, scale[i] * v * scale[j])).collect());
    let lu = scaled
        .to_faer()
        .sp_lu()
        .map_err(|e| Error::FactorizationFailure(format!("{e:?}")))?;
    let fact = Factorization { lu, scale, n };
    // faer only detects structural singularity; a numerically singular pivot shows up as non-finite output.
    let probe = fact.solve(&vec![1.0; n]);
    if probe.iter().any(|v| !v.is_finite()) {
        return Err(Error::FactorizationFailure("matrix is numerically singular".into()));
    }
    Ok(fact)
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        self.solve_scaled(rhs, false)
    }

    pub fn solve_transpose(&self, rhs: &[f64]) -> Vec<f64> {
        self.solve_scaled(rhs, true)
    }

    fn solve_scaled(&self, rhs: &[f64], transpose: bool) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let mut x = Mat::from_fn(self.n, 1, |i, _| self.scale[i] * rhs[i]);
        if transpose {
            self.lu.solve_transpose_in_place(&mut x);
        } else {
            self.lu.solve_in_place(&mut x);
        }
        (0..self.n).map(|i| self.scale[i] * x[(i, 0)]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// Final relative preconditioned residual.
    pub residual: f64,
}

/// Row and column scalings `(L, R)` so that GMRES iterates on `L A R`.
#[derive(Debug, Clone, Default)]
struct Scaling {
    left: Option<Vec<f64>>,
    right: Option<Vec<f64>>,
}

fn scaling(matrix: &CsrMatrix, pc: Preconditioner) -> Result<Scaling> {
    if pc == Preconditioner::None {
        return Ok(Scaling::default());
    }
    let d = matrix.diagonal();
    if let Some(i) = d.iter().position(|v| *v == 0.0) {
        return Err(Error::invalid(format!("Jacobi preconditioner: zero diagonal at row {i}")));
    }
    Ok(match pc {
        Preconditioner::Jacobi => Scaling { left: Some(d.iter().map(|v| 1.0 / v).collect()), right: None },
        _ => {
            let right: Vec<f64> = d.iter().map(|v| 1.0 / v.abs().sqrt()).collect();
            let left = d.iter().zip(&right).map(|(v, r)| r.copysign(*v)).collect();
            Scaling { left: Some(left), right: Some(right) }
        }
    })
}

fn apply(scale: Option<&[f64]>, v: &mut [f64]) {
    if let Some(d) = scale {
        v.iter_mut().zip(d).for_each(|(x, s)| *x *= s);
    }
}

/// Restarted GMRES on the scaled system `L A R y = L b`, `x = R y`.
/// Convergence is declared when `‖L(b − Ax)‖ ≤ tol ‖Lb‖`.
pub fn gmres_solve(matrix: &CsrMatrix, rhs: &[f64], guess: Option<&[f64]>, config: &LinearSolverConfig) -> Result<GmresOutcome> {
    config.validate()?;
    let scale = scaling(matrix, config.preconditioner)?;
    gmres_with(matrix, &scale, rhs, guess, config)
}

fn gmres_with(matrix: &CsrMatrix, scale: &Scaling, rhs: &[f64], guess: Option<&[f64]>, config: &LinearSolverConfig) -> Result<GmresOutcome> {
    let n = matrix.nrows();
    if matrix.ncols() != n || rhs.len() != n {
        return Err(Error::dims("GMRES needs a square matrix and matching right-hand side"));
    }
    let (left, right) = (scale.left.as_deref(), scale.right.as_deref());
    let precondition = |v: &mut [f64]| apply(left, v);
    let mut pb = rhs.to_vec();
    precondition(&mut pb);
    let bnorm = norm2(&pb);
    if bnorm == 0.0 {
        return Ok(GmresOutcome { solution: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    // Iterate on y with x = R y.
    let mut x = match guess {
        Some(g) if g.len() == n => {
            let mut y = g.to_vec();
            if let Some(r) = right {
                y.iter_mut().zip(r).for_each(|(v, s)| *v /= s);
            }
            y
        }
        Some(_) => return Err(Error::dims("initial guess length mismatch")),
        None => vec![0.0; n],
    };
    let mut z = vec![0.0; n];
    let tol = config.gmres_tolerance * bnorm;
    let m = config.gmres_restart;
    let mut iterations = 0;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];

    let residual = |x: &[f64], r: &mut [f64], w: &mut [f64], z: &mut [f64]| {
        z.copy_from_slice(x);
        apply(right, z);
        matrix.mul_vec_into(z, w);
        r.iter_mut().zip(rhs).zip(w.iter()).for_each(|((ri, bi), ai)| *ri = bi - ai);
        precondition(r);
    };

    residual(&x, &mut r, &mut w, &mut z);
    let mut beta = norm2(&r);
    while beta > tol {
        if iterations >= config.max_iterations {
            return Err(Error::ConvergenceFailure { iterations, residual: beta / bnorm });
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && iterations < config.max_iterations {
            z.copy_from_slice(&basis[k]);
            apply(right, &mut z);
            matrix.mul_vec_into(&z, &mut w);
            precondition(&mut w);
            for (i, v) in basis.iter().enumerate() {
                let hij = crate::sparse::dot(&w, v);
                h[i][k] = hij;
                w.iter_mut().zip(v).for_each(|(a, b)| *a -= hij * b);
            }
            let hn = norm2(&w);
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
            }
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            iterations += 1;
            k += 1;
            if g[k].abs() <= tol || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // Back substitution for the least-squares coefficients.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[j]).for_each(|(a, b)| *a += yj * b);
        }
        residual(&x, &mut r, &mut w, &mut z);
        beta = norm2(&r);
    }
    apply(right, &mut x);
    Ok(GmresOutcome { solution: x, iterations, residual: beta / bnorm })
}

enum Backend {
    Direct(Factorization),
    Gmres {
        transpose: CsrMatrix,
        scale: Scaling,
        scale_t: Scaling,
    },
}

/// One step of iterative refinement. The sparse LU alone leaves step residuals
/// well above `ε‖A‖‖x‖`, which shows up directly in residual-weighted estimates.
fn refined(rhs: &[f64], mut x: Vec<f64>, apply: impl Fn(&[f64]) -> Vec<f64>, solve: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut r = apply(&x);
    r.iter_mut().zip(rhs).for_each(|(a, b)| *a = b - *a);
    x.iter_mut().zip(solve(&r)).for_each(|(a, d)| *a += d);
    x
}

/// A step-system solver bound to one matrix. With the direct backend the
/// factorization is reused for transpose solves; the iterative backend keeps
/// an explicit transpose.
pub struct LinearSolver {
    matrix: CsrMatrix,
    backend: Backend,
    config: LinearSolverConfig,
    gmres_iterations: AtomicUsize,
    gmres_solves: AtomicUsize,
}

impl LinearSolver {
    pub fn new(matrix: CsrMatrix, config: &LinearSolverConfig) -> Result<Self> {
        config.validate()?;
        let backend = match config.method {
            SolverMethod::Direct => Backend::Direct(factorize(&matrix)?),
            SolverMethod::Gmres => {
                let transpose = matrix.transpose();
                let scale = scaling(&matrix, config.preconditioner)?;
                let scale_t = scaling(&transpose, config.preconditioner)?;
                Backend::Gmres { transpose, scale, scale_t }
            }
        };
        Ok(Self {
            matrix,
            backend,
            config: *config,
            gmres_iterations: AtomicUsize::new(0),
            gmres_solves: AtomicUsize::new(0),
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn config(&self) -> &LinearSolverConfig {
        &self.config
    }

    /// Solves `A x = b`; `guess` warm-starts the iterative backend.
    pub fn solve(&self, rhs: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        match &self.backend {
            Backend::Direct(f) => Ok(refined(rhs, f.solve(rhs), |x| self.matrix.mul_vec(x), |r| f.solve(r))),
            Backend::Gmres { scale, .. } => self.run_gmres(&self.matrix, scale, rhs, guess),
        }
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, rhs: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        match &self.backend {
            Backend::Direct(f) => Ok(refined(
                rhs,
                f.solve_transpose(rhs),
                |x| self.matrix.mul_vec_transpose(x),
                |r| f.solve_transpose(r),
            )),
            Backend::Gmres { transpose, scale_t, .. } => self.run_gmres(transpose, scale_t, rhs, guess),
        }
    }

    fn run_gmres(&self, m: &CsrMatrix, scale: &Scaling, rhs: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let out = gmres_with(m, scale, rhs, guess, &self.config)?;
        self.gmres_iterations.fetch_add(out.iterations, Ordering::Relaxed);
        self.gmres_solves.fetch_add(1, Ordering::Relaxed);
        log::trace!("gmres: {} iterations, residual {:.3e}", out.iterations, out.residual);
        Ok(out.solution)
    }

    /// Mean GMRES iterations per solve so far (zero for the direct backend).
    pub fn mean_gmres_iterations(&self) -> f64 {
        let s = self.gmres_solves.load(Ordering::Relaxed);
        if s == 0 {
            0.0
        } else {
            self.gmres_iterations.load(Ordering::Relaxed) as f64 / s as f64
        }
    }
}
