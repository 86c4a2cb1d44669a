//! Fourier design matrices and Tikhonov-regularized least squares.
//!
//! A complex amplitude `β = a + ib` multiplying `e^{iθ}` contributes
//! `Re(β e^{iθ}) = a cos θ − b sin θ` to a real prediction, so every complex
//! feature is stored as the real column pair `[cos θ, −sin θ]` and the complex
//! ridge problem becomes an ordinary real one. The squared norm of the real
//! coefficient vector equals the sum of squared complex moduli, so the penalty
//! is unchanged by the reformulation.
//!
//! Two solvers are provided:
//!
//! * [`solve_ridge`] factors the augmented system `[S; √(Nδ̂) I]` with a
//!   column-pivoted Householder QR. With `δ̂ = 0` and a rank-deficient design
//!   it returns the minimum-norm least-squares solution via a complete
//!   orthogonal decomposition.
//! * [`GramSystem`] keeps `SᵀS` and `Sᵀy` around so that replacing a subset of
//!   columns only costs the cross products involving the new columns, then
//!   solves the regularized normal equations by Cholesky. This is the solver
//!   used inside Metropolis chains, where thousands of solves differ only in
//!   some columns. For `δ̂ > 0` the system matrix has condition number at most
//!   `1 + cols/δ̂`; for `δ̂ = 0` it defers to [`solve_ridge`].

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt;
use faer::linalg::cholesky::llt::factor::LltParams;
use faer::linalg::matmul::matmul;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::{Accum, MatMut, MatRef, Par, Spec};

use crate::error::{Error, Result};

/// Dense real design matrix stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DesignMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "design matrix storage",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(DesignMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of real columns (twice the number of complex features).
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn features(&self) -> usize {
        self.cols / 2
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn column_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    /// `S β` for a real coefficient vector.
    pub fn mul_vec(&self, coef: &[f64]) -> Vec<f64> {
        assert_eq!(coef.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (c, &b) in coef.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (o, &s) in out.iter_mut().zip(self.column(c)) {
                *o += s * b;
            }
        }
        out
    }

    /// `Sᵀ v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        (0..self.cols).map(|c| dot(self.column(c), v)).collect()
    }
}

/// Writes the `[cos, −sin]` column pair for every frequency into `out`, whose
/// first column index is `col0`. Phases are `ω_k · p_n`.
pub(crate) fn fill_fourier_columns(
    points: &[f64],
    dim: usize,
    freqs: &[f64],
    out: &mut DesignMatrix,
    col0: usize,
) {
    let n = out.rows;
    debug_assert_eq!(points.len(), n * dim);
    for (k, w) in freqs.chunks_exact(dim).enumerate() {
        let (cos_col, rest) = out.data[(col0 + 2 * k) * n..].split_at_mut(n);
        let sin_col = &mut rest[..n];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let phase: f64 = w.iter().zip(p).map(|(a, b)| a * b).sum();
            let (s, c) = phase.sin_cos();
            cos_col[i] = c;
            sin_col[i] = -s;
        }
    }
}

fn flatten<P: AsRef<[f64]>>(items: &[P], context: &'static str) -> Result<(Vec<f64>, usize)> {
    let dim = items.first().map(|p| p.as_ref().len()).unwrap_or(0);
    let mut flat = Vec::with_capacity(items.len() * dim);
    for p in items {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: dim,
                found: p.len(),
            });
        }
        flat.extend_from_slice(p);
    }
    Ok((flat, dim))
}

/// Design matrix of the x-branch features `e^{iω_k·x_n}`: `N × 2K`.
pub fn assemble_design_x<P, Q>(points: &[P], frequencies: &[Q]) -> Result<DesignMatrix>
where
    P: AsRef<[f64]>,
    Q: AsRef<[f64]>,
{
    let (pts, dim) = flatten(points, "input points")?;
    let (freqs, fdim) = flatten(frequencies, "frequencies")?;
    if !frequencies.is_empty() && !points.is_empty() && fdim != dim {
        return Err(Error::DimensionMismatch {
            context: "frequency vs point dimension",
            expected: dim,
            found: fdim,
        });
    }
    let mut design = DesignMatrix::zeros(points.len(), 2 * frequencies.len());
    fill_fourier_columns(&pts, dim, &freqs, &mut design, 0);
    Ok(design)
}

/// Design matrix of a residual block: the first `2K` columns hold the
/// x-branch features `e^{iω′_k·x_n}`, the last `2K_z` columns the state
/// features `e^{iω_k z̄(x_n)}`.
pub fn assemble_design_resid<P, Q>(
    points: &[P],
    states: &[f64],
    freq_x: &[Q],
    freq_z: &[f64],
) -> Result<DesignMatrix>
where
    P: AsRef<[f64]>,
    Q: AsRef<[f64]>,
{
    if points.len() != states.len() {
        return Err(Error::DimensionMismatch {
            context: "points vs states",
            expected: points.len(),
            found: states.len(),
        });
    }
    let x_part = assemble_design_x(points, freq_x)?;
    let n = points.len();
    let kx = x_part.cols;
    let mut data = x_part.data;
    data.resize(n * (kx + 2 * freq_z.len()), 0.0);
    let mut design = DesignMatrix {
        rows: n,
        cols: kx + 2 * freq_z.len(),
        data,
    };
    fill_fourier_columns(states, 1, freq_z, &mut design, kx);
    Ok(design)
}

/// `min_β N⁻¹|Sβ − y|² + δ̂|β|²`.
#[derive(Debug, Clone, Copy)]
pub struct RidgeProblem<'a> {
    design: &'a DesignMatrix,
    targets: &'a [f64],
    tikhonov: f64,
}

impl<'a> RidgeProblem<'a> {
    pub fn new(design: &'a DesignMatrix, targets: &'a [f64], tikhonov: f64) -> Result<Self> {
        if targets.len() != design.rows {
            return Err(Error::DimensionMismatch {
                context: "ridge targets vs design rows",
                expected: design.rows,
                found: targets.len(),
            });
        }
        if !(tikhonov >= 0.0) || !tikhonov.is_finite() {
            return Err(Error::invalid("tikhonov", format!("must be finite and >= 0, got {tikhonov}")));
        }
        if design.rows == 0 {
            return Err(Error::invalid("design", "no data rows"));
        }
        Ok(RidgeProblem {
            design,
            targets,
            tikhonov,
        })
    }

    pub fn design(&self) -> &DesignMatrix {
        self.design
    }

    pub fn targets(&self) -> &[f64] {
        self.targets
    }

    pub fn tikhonov(&self) -> f64 {
        self.tikhonov
    }

    /// Objective value at `coef`.
    pub fn objective(&self, coef: &[f64]) -> f64 {
        let n = self.design.rows as f64;
        let pred = self.design.mul_vec(coef);
        let data: f64 = pred
            .iter()
            .zip(self.targets)
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        data / n + self.tikhonov * dot(coef, coef)
    }

    /// Gradient `2N⁻¹Sᵀ(Sβ − y) + 2δ̂β`.
    pub fn gradient(&self, coef: &[f64]) -> Vec<f64> {
        let n = self.design.rows as f64;
        let mut resid = self.design.mul_vec(coef);
        for (r, y) in resid.iter_mut().zip(self.targets) {
            *r -= y;
        }
        self.design
            .tr_mul_vec(&resid)
            .into_iter()
            .zip(coef)
            .map(|(g, b)| 2.0 * g / n + 2.0 * self.tikhonov * b)
            .collect()
    }
}

/// Solves the ridge problem through a pivoted QR factorization of the
/// Tikhonov-augmented system. Rank-deficient unregularized problems get the
/// minimum-norm solution.
pub fn solve_ridge(problem: &RidgeProblem<'_>) -> Result<Vec<f64>> {
    let s = problem.design;
    let (n, p) = (s.rows, s.cols);
    if p == 0 {
        return Ok(Vec::new());
    }
    let aug = problem.tikhonov > 0.0;
    let m = if aug { n + p } else { n };
    let root = (n as f64 * problem.tikhonov).sqrt();

    let mut a = vec![0.0; m * p];
    for c in 0..p {
        a[c * m..c * m + n].copy_from_slice(s.column(c));
        if aug {
            a[c * m + n + c] = root;
        }
    }
    let mut b = vec![0.0; m];
    b[..n].copy_from_slice(problem.targets);

    let qr = PivotedQr::factor(a, m, p);
    qr.solve_min_norm(&mut b)
}

struct PivotedQr {
    a: Vec<f64>,
    m: usize,
    n: usize,
    tau: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    fn factor(mut a: Vec<f64>, m: usize, n: usize) -> Self {
        let kmax = m.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut norms: Vec<f64> = (0..n).map(|c| norm2(&a[c * m..(c + 1) * m])).collect();
        let mut ref_norms = norms.clone();
        let mut tau = vec![0.0; kmax];

        for j in 0..kmax {
            // pivot: largest remaining column norm, lowest index on ties
            let mut piv = j;
            for c in j + 1..n {
                if norms[c] > norms[piv] {
                    piv = c;
                }
            }
            if piv != j {
                for i in 0..m {
                    a.swap(j * m + i, piv * m + i);
                }
                norms.swap(j, piv);
                ref_norms.swap(j, piv);
                perm.swap(j, piv);
            }

            let (head, tail) = a.split_at_mut((j + 1) * m);
            let col = &mut head[j * m..];
            tau[j] = householder(&mut col[j..]);

            if tau[j] != 0.0 {
                let v = &col[j..];
                for c in 0..n - j - 1 {
                    let target = &mut tail[c * m + j..(c + 1) * m];
                    apply_reflector(v, tau[j], target);
                }
            }

            for (c, k) in (j + 1..n).enumerate() {
                if norms[k] == 0.0 {
                    continue;
                }
                let r = tail[c * m + j];
                let ratio = (r / norms[k]).abs();
                let t = (1.0 - ratio * ratio).max(0.0);
                let t2 = t * (norms[k] / ref_norms[k]).powi(2);
                if t2 <= f64::EPSILON.sqrt() {
                    let fresh = norm2(&tail[c * m + j + 1..(c + 1) * m]);
                    norms[k] = fresh;
                    ref_norms[k] = fresh;
                } else {
                    norms[k] *= t.sqrt();
                }
            }
        }

        let r00 = if kmax > 0 { a[0].abs() } else { 0.0 };
        let tol = (m.max(n) as f64) * f64::EPSILON * r00;
        let rank = (0..kmax).take_while(|&j| a[j * m + j].abs() > tol).count();

        PivotedQr {
            a,
            m,
            n,
            tau,
            perm,
            rank,
        }
    }

    fn solve_min_norm(&self, b: &mut [f64]) -> Result<Vec<f64>> {
        let (m, n, r) = (self.m, self.n, self.rank);
        // c = Qᵀ b
        for j in 0..m.min(n) {
            if self.tau[j] != 0.0 {
                apply_reflector(&self.a[j * m + j..(j + 1) * m], self.tau[j], &mut b[j..]);
            }
        }

        let mut y = vec![0.0; n];
        if r == n {
            for i in (0..n).rev() {
                let mut s = b[i];
                for c in i + 1..n {
                    s -= self.a[c * m + i] * y[c];
                }
                y[i] = s / self.a[i * m + i];
            }
        } else if r > 0 {
            // Complete orthogonal decomposition: [R11 R12]ᵀ = Z [U; 0].
            let mut t = vec![0.0; n * r];
            for i in 0..r {
                for c in i..n {
                    t[i * n + c] = self.a[c * m + i];
                }
            }
            let mut ztau = vec![0.0; r];
            for j in 0..r {
                let (head, tail) = t.split_at_mut((j + 1) * n);
                let col = &mut head[j * n..];
                ztau[j] = householder(&mut col[j..]);
                if ztau[j] != 0.0 {
                    let v = &col[j..];
                    for c in 0..r - j - 1 {
                        apply_reflector(v, ztau[j], &mut tail[c * n + j..(c + 1) * n]);
                    }
                }
            }
            // Uᵀ w = c, U upper triangular r×r.
            for i in 0..r {
                let mut s = b[i];
                for k in 0..i {
                    s -= t[i * n + k] * y[k];
                }
                let d = t[i * n + i];
                if d == 0.0 {
                    return Err(Error::Solve("singular triangular factor".into()));
                }
                y[i] = s / d;
            }
            for j in (0..r).rev() {
                if ztau[j] != 0.0 {
                    apply_reflector(&t[j * n + j..(j + 1) * n], ztau[j], &mut y[j..]);
                }
            }
        }

        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solve("non-finite solution".into()));
        }
        Ok(x)
    }
}

/// Overwrites `x` with the Householder vector (implicit leading 1, stored
/// below the diagonal) and `x[0]` with `β`; returns `τ`.
fn householder(x: &mut [f64]) -> f64 {
    let alpha = x[0];
    let xnorm = norm2(&x[1..]);
    if xnorm == 0.0 {
        return 0.0;
    }
    let beta = -alpha.signum() * alpha.hypot(xnorm);
    let beta = if alpha == 0.0 { -xnorm } else { beta };
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    for v in &mut x[1..] {
        *v *= scale;
    }
    x[0] = beta;
    tau
}

/// `target ← (I − τ v vᵀ) target` with `v = [1, stored[1..]]`.
fn apply_reflector(stored: &[f64], tau: f64, target: &mut [f64]) {
    let w = target[0] + dot(&stored[1..], &target[1..]);
    let tw = tau * w;
    target[0] -= tw;
    for (t, v) in target[1..].iter_mut().zip(&stored[1..]) {
        *t -= tw * v;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn norm2(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * s.sqrt()
}

fn col_major(a: &[f64], rows: usize, cols: usize) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(&a[..rows * cols], rows, cols)
}

/// Column-major `AᵀB` for column-major `A` (rows × p) and `B` (rows × q).
fn gemm_tn(rows: usize, a: &[f64], p: usize, b: &[f64], q: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * q];
    if rows > 0 && p > 0 && q > 0 {
        let out = MatMut::from_column_major_slice_mut(&mut c, p, q);
        matmul(out, Accum::Replace, col_major(a, rows, p).transpose(), col_major(b, rows, q), 1.0, Par::Seq);
    }
    c
}

/// Symmetric `AᵀA` (p × p), computing the lower triangle and mirroring it.
fn syrk_tn(rows: usize, a: &[f64], p: usize) -> Vec<f64> {
    let mut g = vec![0.0; p * p];
    if rows > 0 && p > 0 {
        let out = MatMut::from_column_major_slice_mut(&mut g, p, p);
        let a = col_major(a, rows, p);
        triangular::matmul(
            out,
            BlockStructure::TriangularLower,
            Accum::Replace,
            a.transpose(),
            BlockStructure::Rectangular,
            a,
            BlockStructure::Rectangular,
            1.0,
            Par::Seq,
        );
    }
    for j in 0..p {
        for i in 0..j {
            g[j * p + i] = g[i * p + j];
        }
    }
    g
}

/// Cached normal-equation data `SᵀS`, `Sᵀy` for a design that evolves by
/// replacing columns.
#[derive(Debug, Clone)]
pub struct GramSystem {
    design: DesignMatrix,
    targets: Vec<f64>,
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

impl GramSystem {
    pub fn new(design: DesignMatrix, targets: &[f64]) -> Result<Self> {
        if targets.len() != design.rows {
            return Err(Error::DimensionMismatch {
                context: "gram targets vs design rows",
                expected: design.rows,
                found: targets.len(),
            });
        }
        let gram = syrk_tn(design.rows, &design.data, design.cols);
        let rhs = design.tr_mul_vec(targets);
        Ok(GramSystem {
            design,
            targets: targets.to_vec(),
            gram,
            rhs,
        })
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Returns a copy where the columns `idx` are replaced by `new_cols`
    /// (`idx.len()` contiguous columns).
    pub fn with_columns(&self, idx: &[usize], new_cols: &[f64]) -> GramSystem {
        let n = self.design.rows;
        let p = self.design.cols;
        assert_eq!(new_cols.len(), idx.len() * n);
        let mut slot = vec![usize::MAX; p];
        for (a, &c) in idx.iter().enumerate() {
            slot[c] = a;
        }
        let mut data = Vec::with_capacity(n * p);
        for (c, &a) in slot.iter().enumerate() {
            if a == usize::MAX {
                data.extend_from_slice(self.design.column(c));
            } else {
                data.extend_from_slice(&new_cols[a * n..(a + 1) * n]);
            }
        }
        let rhs_new: Vec<f64> = new_cols.chunks_exact(n.max(1)).map(|c| dot(c, &self.targets)).collect();
        let mut out = GramSystem {
            design: DesignMatrix { rows: n, cols: p, data },
            targets: self.targets.clone(),
            gram: self.gram.clone(),
            rhs: self.rhs.clone(),
        };
        let self_block = syrk_tn(n, new_cols, idx.len());
        out.patch(idx, new_cols, &self_block, &rhs_new, &self.design, &[]);
        out
    }

    /// Replaces the columns `idx` by those of `other`, which must have been
    /// built from the same targets. Columns in `shared` must be identical in
    /// both systems; their products with `idx` are copied, not recomputed.
    pub fn adopt_columns(&mut self, other: &GramSystem, idx: &[usize], shared: &[usize]) {
        let n = self.design.rows;
        let p = self.design.cols;
        let q = idx.len();
        let mut cols = Vec::with_capacity(q * n);
        for &c in idx {
            cols.extend_from_slice(other.design.column(c));
        }
        let mut block = vec![0.0; q * q];
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                block[a * q + b] = other.gram[ia * p + ib];
            }
        }
        let rhs_new: Vec<f64> = idx.iter().map(|&c| other.rhs[c]).collect();
        for &ia in idx {
            for &s in shared {
                let v = other.gram[ia * p + s];
                self.gram[ia * p + s] = v;
                self.gram[s * p + ia] = v;
            }
        }
        // cross products read the old kept columns, which `patch` leaves alone
        let old = std::mem::replace(&mut self.design, DesignMatrix::zeros(0, 0));
        self.patch(idx, &cols, &block, &rhs_new, &old, shared);
        self.design = old;
        for (a, &c) in idx.iter().enumerate() {
            self.design.column_mut(c).copy_from_slice(&cols[a * n..(a + 1) * n]);
        }
    }

    /// Rewrites the Gram rows/columns `idx` for `new_cols`, taking the
    /// unchanged columns from `kept_source`. Products with columns in `skip`
    /// are left as they are.
    fn patch(
        &mut self,
        idx: &[usize],
        new_cols: &[f64],
        self_block: &[f64],
        rhs_new: &[f64],
        kept_source: &DesignMatrix,
        skip: &[usize],
    ) {
        let n = kept_source.rows;
        let p = kept_source.cols;
        let q = idx.len();
        let mut replaced = vec![false; p];
        for &c in idx.iter().chain(skip) {
            replaced[c] = true;
        }
        let kept: Vec<usize> = (0..p).filter(|&c| !replaced[c]).collect();

        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                self.gram[ia * p + ib] = self_block[a * q + b];
            }
            self.rhs[ia] = rhs_new[a];
        }
        if !kept.is_empty() && q > 0 {
            let mut kept_cols = Vec::with_capacity(kept.len() * n);
            for &c in &kept {
                kept_cols.extend_from_slice(kept_source.column(c));
            }
            let cross = gemm_tn(n, new_cols, q, &kept_cols, kept.len());
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &kb) in kept.iter().enumerate() {
                    let v = cross[b * q + a];
                    self.gram[ia * p + kb] = v;
                    self.gram[kb * p + ia] = v;
                }
            }
        }
    }

    /// Minimizer of `N⁻¹|Sβ − y|² + δ̂|β|²`.
    pub fn solve(&self, tikhonov: f64) -> Result<Vec<f64>> {
        let p = self.design.cols;
        if p == 0 {
            return Ok(Vec::new());
        }
        if tikhonov > 0.0 {
            let inv_n = 1.0 / self.design.rows as f64;
            let mut a: Vec<f64> = self.gram.iter().map(|g| g * inv_n).collect();
            for i in 0..p {
                a[i * p + i] += tikhonov;
            }
            if cholesky_in_place(&mut a, p) {
                let b: Vec<f64> = self.rhs.iter().map(|r| r * inv_n).collect();
                return Ok(cholesky_solve(&a, p, b));
            }
            log::debug!("cholesky failed on regularized gram matrix; falling back to QR");
        }
        solve_ridge(&RidgeProblem::new(&self.design, &self.targets, tikhonov)?)
    }
}

/// Lower Cholesky factor of a symmetric positive definite column-major
/// matrix, in place. Only the lower triangle is read or written. Returns false if the matrix is
/// not numerically positive definite.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    let params: Spec<LltParams, f64> = Default::default();
    let mut buf = MemBuffer::new(llt::factor::cholesky_in_place_scratch::<f64>(n, Par::Seq, params));
    let m = MatMut::from_column_major_slice_mut(a, n, n);
    llt::factor::cholesky_in_place(m, Default::default(), Par::Seq, MemStack::new(&mut buf), params).is_ok()
}

fn cholesky_solve(l: &[f64], n: usize, mut b: Vec<f64>) -> Vec<f64> {
    // `l` is column-major: L(i, j) = l[j * n + i].
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[j * n + i] * b[j];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let s = b[i] - dot(&l[i * n + i + 1..(i + 1) * n], &b[i + 1..]);
        b[i] = s / l[i * n + i];
    }
    b
}
