//! Minimal sparse matrices and solvers for the grid operators.
//!
//! The discrete generators are square, very sparse (3-point stencils in
//! 1-D, 9-point in 2-D), and small enough that a compressed-row layout
//! plus a tridiagonal solve / BiCGStab covers everything the crate needs.

use crate::error::{Error, Result};

/// Square sparse matrix in compressed-row form.
///
/// Rows are sorted by column, but a (row, col) slot may hold several
/// stacked entries in insertion order; `matvec` and friends accumulate
/// them. Keeping stacked entries lets the operator builders preserve
/// exact pairwise cancellation: a flux coefficient enters two rows as
/// +q and -q, and a plain in-order column sum then cancels bitwise
/// instead of leaving merge-rounding residue. Call [`merged`](Self::merged)
/// for the canonical one-entry-per-slot form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

/// Accumulates (row, col, value) entries.
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> SparseBuilder {
        SparseBuilder {
            n,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn build(mut self) -> SparseMatrix {
        // Stable: entries sharing a (row, col) slot keep insertion order,
        // which the exact-cancellation property of column sums relies on.
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.n + 1];
        for &(r, _, _) in &self.entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..self.n {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut vals = Vec::with_capacity(self.entries.len());
        for (_, c, v) in self.entries {
            col_idx.push(c);
            vals.push(v);
        }
        SparseMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            vals,
        }
    }
}

impl SparseMatrix {
    pub fn identity(n: usize) -> SparseMatrix {
        SparseMatrix {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Iterate entries as (row, col, value).
    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.vals[k]))
        })
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.col_idx[k]];
            }
            y[r] = s;
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for k in 0..self.vals.len() {
            sums[self.col_idx[k]] += self.vals[k];
        }
        sums
    }

    /// Largest |entry|.
    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Canonical form with one entry per (row, col) slot (stacked entries
    /// summed in storage order, exact zeros dropped).
    pub fn merged(&self) -> SparseMatrix {
        let mut b = SparseBuilder::new(self.n);
        let mut run: Option<(usize, usize, f64)> = None;
        for (r, c, v) in self.iter_entries() {
            match run {
                Some((rr, rc, acc)) if rr == r && rc == c => run = Some((rr, rc, acc + v)),
                Some((rr, rc, acc)) => {
                    b.add(rr, rc, acc);
                    run = Some((r, c, v));
                }
                None => run = Some((r, c, v)),
            }
        }
        if let Some((rr, rc, acc)) = run {
            b.add(rr, rc, acc);
        }
        b.build()
    }

    /// Entrywise `self - other` on the union pattern.
    ///
    /// Both operands are merged first and then subtracted slot by slot, so
    /// two matrices assembled by the same code path differ by exactly 0.0
    /// wherever their entries are bitwise equal.
    pub fn sub(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.n, other.n);
        let ma = self.merged();
        let mb = other.merged();
        let mut b = SparseBuilder::new(self.n);
        for r in 0..self.n {
            let mut ka = ma.row_ptr[r];
            let mut kb = mb.row_ptr[r];
            let ea = ma.row_ptr[r + 1];
            let eb = mb.row_ptr[r + 1];
            while ka < ea || kb < eb {
                if kb >= eb || (ka < ea && ma.col_idx[ka] < mb.col_idx[kb]) {
                    b.add(r, ma.col_idx[ka], ma.vals[ka]);
                    ka += 1;
                } else if ka >= ea || mb.col_idx[kb] < ma.col_idx[ka] {
                    b.add(r, mb.col_idx[kb], -mb.vals[kb]);
                    kb += 1;
                } else {
                    b.add(r, ma.col_idx[ka], ma.vals[ka] - mb.vals[kb]);
                    ka += 1;
                    kb += 1;
                }
            }
        }
        b.build()
    }

    /// `scale * self`.
    pub fn scaled(&self, scale: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= scale;
        }
        out
    }

    /// `I + c * self`.
    pub fn identity_plus_scaled(&self, c: f64) -> SparseMatrix {
        let mut b = SparseBuilder::new(self.n);
        for (r, col, v) in self.iter_entries() {
            b.add(r, col, c * v);
        }
        for i in 0..self.n {
            b.add(i, i, 1.0);
        }
        b.build()
    }

    /// Diagonals (sub, main, super) when the pattern is tridiagonal.
    /// Stacked entries accumulate into their diagonal.
    pub fn tridiagonal(&self) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for (r, c, v) in self.iter_entries() {
            if c + 1 == r {
                lower[r] += v;
            } else if c == r {
                diag[r] += v;
            } else if c == r + 1 {
                upper[r] += v;
            } else {
                return None;
            }
        }
        Some((lower, diag, upper))
    }

    /// Transpose (used for backward/forward adjoint checks in tests).
    pub fn transpose(&self) -> SparseMatrix {
        let mut b = SparseBuilder::new(self.n);
        for (r, c, v) in self.iter_entries() {
            b.add(c, r, v);
        }
        b.build()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for (r, c, v) in self.iter_entries() {
            out[r * self.n + c] += v;
        }
        out
    }
}

/// Solve a tridiagonal system in place (Thomas algorithm).
///
/// `lower[i]` multiplies x[i-1] in row i, `upper[i]` multiplies x[i+1].
/// Intended for the diagonally dominant systems the time steppers build;
/// a vanishing pivot reports non-convergence rather than panicking.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    assert!(n > 0 && lower.len() == n && upper.len() == n && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut piv = diag[0];
    if piv.abs() < f64::MIN_POSITIVE {
        return Err(Error::NonConvergence {
            residual: f64::INFINITY,
            iterations: 0,
        });
    }
    c[0] = upper[0] / piv;
    x[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - lower[i] * c[i - 1];
        if piv.abs() < f64::MIN_POSITIVE {
            return Err(Error::NonConvergence {
                residual: f64::INFINITY,
                iterations: i,
            });
        }
        c[i] = upper[i] / piv;
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Solve `A x = b` by Jacobi-preconditioned BiCGStab.
///
/// Returns the solution once the 2-norm residual drops below
/// `tol * ||b||` (or `tol` for zero right-hand sides).
pub fn bicgstab(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = a.n();
    assert_eq!(b.len(), n);
    assert_eq!(x0.len(), n);

    let mut diag = vec![0.0; n];
    for (r, c, v) in a.iter_entries() {
        if r == c {
            diag[r] += v;
        }
    }
    let inv_diag: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > f64::MIN_POSITIVE { 1.0 / d } else { 1.0 })
        .collect();

    let norm_b = norm2(b).max(f64::MIN_POSITIVE);
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut res = norm2(&r);
    if res <= tol * norm_b {
        return Ok(x);
    }

    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];

    for iter in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < f64::MIN_POSITIVE {
            return Err(Error::NonConvergence {
                residual: res / norm_b,
                iterations: iter,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        for i in 0..n {
            y[i] = inv_diag[i] * p[i];
        }
        a.matvec(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= tol * norm_b {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        for i in 0..n {
            z[i] = inv_diag[i] * s[i];
        }
        a.matvec(&z, &mut t);
        let tt = dot(&t, &t);
        if tt.abs() < f64::MIN_POSITIVE {
            return Err(Error::NonConvergence {
                residual: res / norm_b,
                iterations: iter,
            });
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r);
        if res <= tol * norm_b {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence {
        residual: res / norm_b,
        iterations: max_iter,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
