//! Incremental truncated SVD for building POD bases one bunch of snapshots at a time.

use faer::Mat;

use crate::error::{Error, Result};

/// Residual columns shorter than this fraction of the original snapshot are treated as in-span.
const SPAN_TOLERANCE: f64 = 1e-10;
/// Singular values below this fraction of the largest are discarded as round-off.
const RANK_TOLERANCE: f64 = 1e-13;
const ORTHOGONALITY_TOLERANCE: f64 = 1e-10;
const UPDATES_BETWEEN_REORTHOGONALIZATION: usize = 50;

#[derive(Debug, Clone)]
pub struct PodBasis {
    /// `n × N` column-orthonormal modes.
    pub modes: Mat<f64>,
    pub singular_values: Vec<f64>,
    pub energy_threshold: f64,
    /// Sum of squared norms of every snapshot fed so far.
    pub total_energy: f64,
    pub snapshot_count: usize,
    updates_since_qr: usize,
}

impl PodBasis {
    pub fn new(n: usize, energy_threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&energy_threshold) {
            return Err(Error::invalid(format!("energy threshold must lie in [0, 1], got {energy_threshold}")));
        }
        Ok(Self {
            modes: Mat::zeros(n, 0),
            singular_values: Vec::new(),
            energy_threshold,
            total_energy: 0.0,
            snapshot_count: 0,
            updates_since_qr: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.modes.nrows()
    }

    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    /// Feeds a single snapshot.
    pub fn push(&mut self, snapshot: &[f64]) -> Result<()> {
        let bunch = Mat::from_fn(snapshot.len(), 1, |i, _| snapshot[i]);
        ipod_update(self, &bunch)
    }

    /// `max |ΨᵀΨ − I|`
    pub fn orthogonality_error(&self) -> f64 {
        let g = self.modes.transpose() * &self.modes;
        let mut err = 0.0f64;
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((g[(i, j)] - target).abs());
            }
        }
        err
    }

    /// `Ψᵀ v`
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim());
        (0..self.rank())
            .map(|j| (0..self.dim()).map(|i| self.modes[(i, j)] * v[i]).sum())
            .collect()
    }
}

/// `(Σ_{i≤N} σᵢ²) / total_energy`
pub fn energy_fraction(singular_values: &[f64], total_energy: f64, n: usize) -> Result<f64> {
    if !(total_energy > 0.0) {
        return Err(Error::UndefinedEnergy);
    }
    if n > singular_values.len() {
        return Err(Error::invalid(format!("rank {n} exceeds {} singular values", singular_values.len())));
    }
    Ok(singular_values[..n].iter().map(|s| s * s).sum::<f64>() / total_energy)
}

/// Smallest `N ≥ 1` whose energy fraction reaches `threshold`; the full rank if none does.
pub fn truncation_rank(singular_values: &[f64], total_energy: f64, threshold: f64) -> usize {
    let d = singular_values.len();
    if d == 0 {
        return 0;
    }
    if !(total_energy > 0.0) {
        return d;
    }
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc / total_energy >= threshold {
            return i + 1;
        }
    }
    d
}

/// Rank-b additive update of a truncated SVD.
///
/// With `H = ΨᵀB`, `P = B − ΨH = Q_P R_P`, the updated factorization follows from
/// the SVD of the small matrix `[[diag Σ, H], [0, R_P]]`. The retained rank never
/// drops below the previous rank.
pub fn ipod_update(basis: &mut PodBasis, bunch: &Mat<f64>) -> Result<()> {
    let n = basis.dim();
    if bunch.nrows() != n {
        return Err(Error::dims(format!("snapshot length {} does not match basis dimension {n}", bunch.nrows())));
    }
    let mut columns = Vec::with_capacity(bunch.ncols());
    for j in 0..bunch.ncols() {
        let col: Vec<f64> = (0..n).map(|i| bunch[(i, j)]).collect();
        let e: f64 = col.iter().map(|v| v * v).sum();
        if !e.is_finite() {
            return Err(Error::invalid("snapshot contains non-finite entries"));
        }
        if e == 0.0 {
            log::warn!("skipping zero-norm snapshot");
            continue;
        }
        basis.total_energy += e;
        basis.snapshot_count += 1;
        columns.push((col, e.sqrt()));
    }
    if columns.is_empty() {
        return Ok(());
    }
    let b = columns.len();
    let r0 = basis.rank();
    let psi = &basis.modes;

    // H = ΨᵀB and P = B − ΨH, with one re-projection pass for stability.
    let mut h = Mat::<f64>::zeros(r0, b);
    let mut residuals = Vec::with_capacity(b);
    for (j, (col, _)) in columns.iter().enumerate() {
        let mut p = col.clone();
        for _ in 0..2 {
            for k in 0..r0 {
                let c: f64 = (0..n).map(|i| psi[(i, k)] * p[i]).sum();
                h[(k, j)] += c;
                for (i, pi) in p.iter_mut().enumerate() {
                    *pi -= c * psi[(i, k)];
                }
            }
        }
        residuals.push(p);
    }

    // Modified Gram-Schmidt with reorthogonalization on the residual block.
    let mut qp: Vec<Vec<f64>> = Vec::new();
    let mut rp_entries: Vec<(usize, usize, f64)> = Vec::new();
    for (j, mut v) in residuals.into_iter().enumerate() {
        for _ in 0..2 {
            for (k, q) in qp.iter().enumerate() {
                let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                rp_entries.push((k, j, c));
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nv > SPAN_TOLERANCE * columns[j].1 {
            rp_entries.push((qp.len(), j, nv));
            qp.push(v.iter().map(|x| x / nv).collect());
        }
    }
    let r = qp.len();

    let mut q = Mat::<f64>::zeros(n, r0 + r);
    for k in 0..r0 {
        for i in 0..n {
            q[(i, k)] = psi[(i, k)];
        }
    }
    for (k, col) in qp.iter().enumerate() {
        for i in 0..n {
            q[(i, r0 + k)] = col[i];
        }
    }

    let mut f = Mat::<f64>::zeros(r0 + r, r0 + b);
    for (k, s) in basis.singular_values.iter().enumerate() {
        f[(k, k)] = *s;
    }
    for j in 0..b {
        for k in 0..r0 {
            f[(k, r0 + j)] = h[(k, j)];
        }
    }
    for (k, j, v) in rp_entries {
        f[(r0 + k, r0 + j)] += v;
    }

    basis.updates_since_qr += 1;
    let drift = if r0 > 0 && r > 0 {
        let cross = q.subcols(0, r0).transpose() * q.subcols(r0, r);
        max_abs(&cross)
    } else {
        0.0
    };
    if drift > ORTHOGONALITY_TOLERANCE || basis.updates_since_qr > UPDATES_BETWEEN_REORTHOGONALIZATION {
        let qr = q.as_ref().qr();
        let rq = qr.thin_R().to_owned();
        q = qr.compute_thin_Q();
        f = &rq * &f;
        basis.updates_since_qr = 0;
    }

    let svd = f.as_ref().thin_svd().map_err(|e| Error::DegenerateBasis(format!("SVD failed: {e:?}")))?;
    let s_all: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let s_max = s_all.first().copied().unwrap_or(0.0);
    let significant = s_all.iter().take_while(|s| **s > RANK_TOLERANCE * s_max).count();
    let energy_rank = truncation_rank(&s_all[..significant], basis.total_energy, basis.energy_threshold);
    let keep = energy_rank.max(r0).min(significant);

    let u = svd.U();
    basis.modes = &q * u.subcols(0, keep);
    basis.singular_values = s_all[..keep].to_vec();
    Ok(())
}

fn max_abs(m: &Mat<f64>) -> f64 {
    let mut out = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].abs());
        }
    }
    out
}
