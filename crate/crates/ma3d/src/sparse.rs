//! Sparse linear algebra for the Newton step.
//!
//! The Newton systems assembled by the operator module are sparse, weakly
//! diagonally dominant, and (for the polytope scheme) M-matrix-like with
//! identity rows at boundary nodes, so an incomplete-LU preconditioned
//! BiCGSTAB iteration is a good fit.  The solver never trusts the recursive
//! residual alone: it only reports success after checking the true residual
//! `‖b − Ax‖₂ / ‖b‖₂` against the requested tolerance, so a lucky breakdown
//! or preconditioner fix-up can slow convergence but not corrupt a result.

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Real;

/// Errors from sparse factorization and iterative solves.
#[derive(Debug, Error)]
pub enum SparseError {
    /// A matrix row has no stored diagonal entry, so ILU(0) cannot pivot.
    #[error("row {0} has no diagonal entry")]
    MissingDiagonal(usize),
    /// Dimension mismatch between the matrix and a vector argument.
    #[error("matrix is {n}x{n} but vector has length {len}")]
    DimensionMismatch { n: usize, len: usize },
    /// The iteration hit its cap before reaching the tolerance.
    #[error(
        "linear solver stalled after {iters} iterations (relative residual {rel_residual:.3e})"
    )]
    NotConverged { iters: usize, rel_residual: f64 },
}

/// Per-solve iteration statistics, reported up through the Newton log.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LinearStats {
    /// BiCGSTAB iterations performed.
    pub iterations: usize,
    /// Verified relative true residual `‖b − Ax‖₂ / ‖b‖₂` at exit.
    pub rel_residual: f64,
}

// ---------------------------------------------------------------------------
// CSR storage
// ---------------------------------------------------------------------------

/// Square sparse matrix in compressed sparse row form, columns sorted within
/// each row.
#[derive(Debug, Clone)]
pub struct CsrMatrix<R> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<R>,
}

impl<R: Real> CsrMatrix<R> {
    /// Builds a matrix from per-row entry lists.  Entries within a row are
    /// sorted by column and duplicates are summed; explicit zeros are kept so
    /// the sparsity pattern is exactly what the caller supplied.
    pub fn from_rows(rows: Vec<Vec<(u32, R)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(u32, R)> = Vec::with_capacity(row.len());
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Matrix dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[R]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Dense matrix-vector product `y = Ax`.
    pub fn matvec(&self, x: &[R], y: &mut [R]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = R::zero();
            for (c, v) in cols.iter().zip(vals) {
                acc += *v * x[*c as usize];
            }
            y[i] = acc;
        }
    }

    /// Relative true residual `‖b − Ax‖₂ / ‖b‖₂` (absolute norm if `b = 0`).
    pub fn relative_residual(&self, x: &[R], b: &[R]) -> R {
        let mut ax = vec![R::zero(); self.n];
        self.matvec(x, &mut ax);
        let mut num = R::zero();
        let mut den = R::zero();
        for i in 0..self.n {
            let r = b[i] - ax[i];
            num += r * r;
            den += b[i] * b[i];
        }
        if den > R::zero() {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }
}

// ---------------------------------------------------------------------------
// ILU(0)
// ---------------------------------------------------------------------------

/// Incomplete LU factorization with zero fill-in, on the matrix's own
/// sparsity pattern.
///
/// `L` has an implicit unit diagonal and is stored strictly below the
/// diagonal; `U` holds the diagonal and the strict upper part.  Vanishing
/// pivots are replaced by a row-scaled fallback: this degrades the
/// preconditioner but never the solution, because the solver verifies the
/// true residual independently.
#[derive(Debug, Clone)]
pub struct Ilu0<R> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<R>,
    diag: Vec<usize>,
}

impl<R: Real> Ilu0<R> {
    /// Factorizes `a` on its own pattern.  Every row must store a diagonal
    /// entry (assembled systems always do).
    pub fn new(a: &CsrMatrix<R>) -> Result<Self, SparseError> {
        let n = a.n;
        let row_ptr = a.row_ptr.clone();
        let cols = a.cols.clone();
        let mut vals = a.vals.clone();
        let mut diag = vec![0usize; n];
        for i in 0..n {
            let r = row_ptr[i]..row_ptr[i + 1];
            match cols[r.clone()].binary_search(&(i as u32)) {
                Ok(off) => diag[i] = r.start + off,
                Err(_) => return Err(SparseError::MissingDiagonal(i)),
            }
        }

        for i in 0..n {
            let row_start = row_ptr[i];
            let row_end = row_ptr[i + 1];
            let mut idx = row_start;
            while idx < row_end && (cols[idx] as usize) < i {
                let k = cols[idx] as usize;
                let lik = vals[idx] / vals[diag[k]];
                vals[idx] = lik;
                // Subtract l_ik · (U-part of row k) on row i's existing
                // pattern only.
                for kk in diag[k] + 1..row_ptr[k + 1] {
                    let j = cols[kk];
                    let ukj = vals[kk];
                    if let Ok(off) = cols[idx + 1..row_end].binary_search(&j) {
                        vals[idx + 1 + off] -= lik * ukj;
                    }
                }
                idx += 1;
            }
            // Pivot fix-up: keep the factorization usable on rows where
            // elimination cancelled the diagonal.
            let d = diag[i];
            let row_scale = vals[row_start..row_end]
                .iter()
                .fold(R::zero(), |m, v| m.max(v.abs()));
            let floor = if row_scale > R::zero() {
                row_scale * R::of(1e-12)
            } else {
                R::one()
            };
            if vals[d].abs() < floor {
                vals[d] = if vals[d] >= R::zero() { floor } else { -floor };
            }
        }

        Ok(Ilu0 {
            n,
            row_ptr,
            cols,
            vals,
            diag,
        })
    }

    /// Applies the preconditioner: `out = U⁻¹ L⁻¹ rhs`.
    pub fn solve(&self, rhs: &[R], out: &mut [R]) {
        assert_eq!(rhs.len(), self.n);
        assert_eq!(out.len(), self.n);
        // Forward: L z = rhs with unit diagonal, in place in `out`.
        for i in 0..self.n {
            let mut acc = rhs[i];
            let mut idx = self.row_ptr[i];
            while idx < self.diag[i] {
                acc -= self.vals[idx] * out[self.cols[idx] as usize];
                idx += 1;
            }
            out[i] = acc;
        }
        // Backward: U x = z.
        for i in (0..self.n).rev() {
            let mut acc = out[i];
            for idx in self.diag[i] + 1..self.row_ptr[i + 1] {
                acc -= self.vals[idx] * out[self.cols[idx] as usize];
            }
            out[i] = acc / self.vals[self.diag[i]];
        }
    }
}

// ---------------------------------------------------------------------------
// BiCGSTAB
// ---------------------------------------------------------------------------

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn norm2<R: Real>(a: &[R]) -> R {
    dot(a, a).sqrt()
}

/// Solves `Ax = b` with ILU(0)-preconditioned BiCGSTAB.
///
/// Convergence means a **verified** relative true residual
/// `‖b − Ax‖₂/‖b‖₂ ≤ tol`; the recursive residual only schedules the checks.
/// Breakdowns restart the Krylov process from the current iterate instead of
/// failing, so the method degrades toward (slow) robustness on the
/// non-symmetric indefinite systems the comparison schemes can produce.
pub fn bicgstab<R: Real>(
    a: &CsrMatrix<R>,
    b: &[R],
    x0: Option<&[R]>,
    tol: R,
    max_iters: usize,
) -> Result<(Vec<R>, LinearStats), SparseError> {
    let n = a.n();
    if b.len() != n {
        return Err(SparseError::DimensionMismatch { n, len: b.len() });
    }
    let norm_b = norm2(b);
    if norm_b == R::zero() {
        return Ok((
            vec![R::zero(); n],
            LinearStats {
                iterations: 0,
                rel_residual: 0.0,
            },
        ));
    }
    let ilu = Ilu0::new(a)?;

    let mut x = match x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(SparseError::DimensionMismatch { n, len: x0.len() });
            }
            x0.to_vec()
        }
        None => vec![R::zero(); n],
    };

    let mut r = vec![R::zero(); n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut r_hat = r.clone();
    let mut p = r.clone();
    let mut v = vec![R::zero(); n];
    let mut p_hat = vec![R::zero(); n];
    let mut s_hat = vec![R::zero(); n];
    let mut t = vec![R::zero(); n];
    let mut rho = dot(&r_hat, &r);

    let target = tol * norm_b;
    let tiny = R::of(1e-300);
    let mut best_true = a.relative_residual(&x, b);
    if best_true <= tol {
        return Ok((
            x,
            LinearStats {
                iterations: 0,
                rel_residual: best_true.f64(),
            },
        ));
    }

    let restart = |r: &[R], r_hat: &mut Vec<R>, p: &mut Vec<R>, rho: &mut R| {
        *r_hat = r.to_vec();
        *p = r.to_vec();
        *rho = dot(r, r);
    };

    for iter in 1..=max_iters {
        ilu.solve(&p, &mut p_hat);
        a.matvec(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < tiny {
            restart(&r, &mut r_hat, &mut p, &mut rho);
            continue;
        }
        let alpha = rho / denom;
        // s = r − α v, reusing r's storage.
        for i in 0..n {
            r[i] -= alpha * v[i];
        }
        if norm2(&r) <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            let true_res = a.relative_residual(&x, b);
            best_true = best_true.min(true_res);
            if true_res <= tol {
                return Ok((
                    x,
                    LinearStats {
                        iterations: iter,
                        rel_residual: true_res.f64(),
                    },
                ));
            }
            restart(&r, &mut r_hat, &mut p, &mut rho);
            continue;
        }
        ilu.solve(&r, &mut s_hat);
        a.matvec(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt < tiny {
            restart(&r, &mut r_hat, &mut p, &mut rho);
            continue;
        }
        let omega = dot(&t, &r) / tt;
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
        }
        for i in 0..n {
            r[i] -= omega * t[i];
        }

        // Accept only on the true residual; refresh the recursion on it
        // periodically to fight drift.
        if norm2(&r) <= target || iter % 50 == 0 {
            let mut ax = vec![R::zero(); n];
            a.matvec(&x, &mut ax);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
            let true_res = norm2(&r) / norm_b;
            best_true = best_true.min(true_res);
            if true_res <= tol {
                return Ok((
                    x,
                    LinearStats {
                        iterations: iter,
                        rel_residual: true_res.f64(),
                    },
                ));
            }
            restart(&r, &mut r_hat, &mut p, &mut rho);
            continue;
        }

        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < tiny || omega.abs() < tiny {
            restart(&r, &mut r_hat, &mut p, &mut rho);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
    }

    Err(SparseError::NotConverged {
        iters: max_iters,
        rel_residual: a.relative_residual(&x, b).min(best_true).f64(),
    })
}
