//! Symmetric 3x3 matrices and their spectral helpers.
//!
//! Stored as the upper triangle so symmetry is exact by construction. Positive
//! definiteness and the condition measure kappa(M) = sqrt(||M|| ||M^-1||) are
//! derived from eigenvalues computed with a cyclic Jacobi sweep — at 3x3 this is
//! a handful of rotations and avoids any external linear-algebra dependency.

use crate::geom::Vec3;
use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    /// The operation requires a (strictly) positive definite matrix.
    #[error("matrix is not positive definite (eigenvalue {0} <= 0)")]
    NotPositiveDefinite(String),
}

/// Symmetric 3x3 real matrix, upper triangle `[m00, m01, m02, m11, m12, m22]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMatrix<R> {
    upper: [R; 6],
}

impl<R: Real> SymMatrix<R> {
    pub fn from_upper(upper: [R; 6]) -> Self {
        Self { upper }
    }

    pub fn from_diag(d: Vec3<R>) -> Self {
        let z = R::zero();
        Self::from_upper([d[0], z, z, d[1], z, d[2]])
    }

    pub fn identity() -> Self {
        Self::from_diag([R::one(), R::one(), R::one()])
    }

    /// `a + s * v v^T` — the rank-one families used by the consistency sphere maps.
    pub fn rank_one_update(a: Self, s: R, v: Vec3<R>) -> Self {
        let mut u = a.upper;
        u[0] += s * v[0] * v[0];
        u[1] += s * v[0] * v[1];
        u[2] += s * v[0] * v[2];
        u[3] += s * v[1] * v[1];
        u[4] += s * v[1] * v[2];
        u[5] += s * v[2] * v[2];
        Self { upper: u }
    }

    /// Assemble `Q D Q^T` from an orthogonal column basis and eigenvalues; the
    /// upper triangle is filled directly so the result is exactly symmetric.
    pub fn from_eigen(q_columns: [Vec3<R>; 3], lambda: Vec3<R>) -> Self {
        let entry = |i: usize, j: usize| {
            (0..3)
                .map(|k| lambda[k] * q_columns[k][i] * q_columns[k][j])
                .fold(R::zero(), |a, b| a + b)
        };
        Self::from_upper([
            entry(0, 0),
            entry(0, 1),
            entry(0, 2),
            entry(1, 1),
            entry(1, 2),
            entry(2, 2),
        ])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> R {
        const IDX: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
        self.upper[IDX[i][j]]
    }

    pub fn upper(&self) -> [R; 6] {
        self.upper
    }

    pub fn to_rows(&self) -> [Vec3<R>; 3] {
        [
            [self.get(0, 0), self.get(0, 1), self.get(0, 2)],
            [self.get(1, 0), self.get(1, 1), self.get(1, 2)],
            [self.get(2, 0), self.get(2, 1), self.get(2, 2)],
        ]
    }

    pub fn mul_vec(&self, v: Vec3<R>) -> Vec3<R> {
        let r = self.to_rows();
        [
            crate::geom::dot(r[0], v),
            crate::geom::dot(r[1], v),
            crate::geom::dot(r[2], v),
        ]
    }

    /// Quadratic form `<v, M v>` — the squared M-norm of `v`.
    pub fn quad(&self, v: Vec3<R>) -> R {
        crate::geom::dot(v, self.mul_vec(v))
    }

    pub fn trace(&self) -> R {
        self.upper[0] + self.upper[3] + self.upper[5]
    }

    pub fn det(&self) -> R {
        let r = self.to_rows();
        crate::geom::det3(r[0], r[1], r[2])
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut u = self.upper;
        for (a, b) in u.iter_mut().zip(other.upper.iter()) {
            *a += *b;
        }
        Self { upper: u }
    }

    pub fn scale(&self, s: R) -> Self {
        let mut u = self.upper;
        for a in u.iter_mut() {
            *a *= s;
        }
        Self { upper: u }
    }

    /// Eigenvalues in ascending order, by cyclic Jacobi rotations.
    ///
    /// For symmetric 3x3 input the iteration is unconditionally convergent; the
    /// sweep cap is a safety net, never reached in practice.
    pub fn eigenvalues(&self) -> Vec3<R> {
        let mut a = [
            [self.get(0, 0), self.get(0, 1), self.get(0, 2)],
            [self.get(1, 0), self.get(1, 1), self.get(1, 2)],
            [self.get(2, 0), self.get(2, 1), self.get(2, 2)],
        ];
        let scale = self
            .upper
            .iter()
            .fold(R::zero(), |m, &x| if x.abs() > m { x.abs() } else { m });
        if scale == R::zero() {
            return [R::zero(); 3];
        }
        let tol = R::epsilon() * scale;
        for _sweep in 0..64 {
            let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
            if off <= tol {
                break;
            }
            for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
                let apq = a[p][q];
                if apq.abs() <= tol * R::of(1e-3) {
                    continue;
                }
                // Classic Jacobi rotation annihilating a[p][q].
                let theta = (a[q][q] - a[p][p]) / (R::of(2.0) * apq);
                let t = {
                    let s = if theta >= R::zero() {
                        R::one()
                    } else {
                        -R::one()
                    };
                    s / (theta.abs() + (theta * theta + R::one()).sqrt())
                };
                let c = R::one() / (t * t + R::one()).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
        let mut ev = [a[0][0], a[1][1], a[2][2]];
        ev.sort_by(|x, y| x.partial_cmp(y).expect("eigenvalues are finite"));
        ev
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eigenvalues()[0] > R::zero()
    }

    /// kappa(M) = sqrt(||M|| ||M^-1||) = sqrt(lambda_max / lambda_min) for SPD M.
    pub fn kappa(&self) -> Result<R, MatrixError> {
        let ev = self.eigenvalues();
        if ev[0] <= R::zero() {
            return Err(MatrixError::NotPositiveDefinite(format!("{}", ev[0])));
        }
        Ok((ev[2] / ev[0]).sqrt())
    }

    /// Upper Cholesky factor `U` with `M = U^T U`, as
    /// `[u00, u01, u02, u11, u12, u22]`; `None` when `M` is not positive
    /// definite. Used for pruned lattice-point enumeration under the M-norm.
    pub fn cholesky(&self) -> Option<[R; 6]> {
        let m = self.upper;
        if !(m[0] > R::zero()) {
            return None;
        }
        let u00 = m[0].sqrt();
        let u01 = m[1] / u00;
        let u02 = m[2] / u00;
        let d11 = m[3] - u01 * u01;
        if !(d11 > R::zero()) {
            return None;
        }
        let u11 = d11.sqrt();
        let u12 = (m[4] - u01 * u02) / u11;
        let d22 = m[5] - u02 * u02 - u12 * u12;
        if !(d22 > R::zero()) {
            return None;
        }
        Some([u00, u01, u02, u11, u12, d22.sqrt()])
    }
}
