//! Small fixed-size vector helpers used by the geometric kernels.
//!
//! Three-component arrays stand in for points/directions throughout the crate;
//! these free functions keep the polytope and grid code readable without pulling
//! in a linear-algebra dependency for 3-vectors.

use crate::scalar::Real;

pub type Vec3<R> = [R; 3];

#[inline]
pub fn dot<R: Real>(a: Vec3<R>, b: Vec3<R>) -> R {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<R: Real>(a: Vec3<R>, b: Vec3<R>) -> Vec3<R> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn sub<R: Real>(a: Vec3<R>, b: Vec3<R>) -> Vec3<R> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add<R: Real>(a: Vec3<R>, b: Vec3<R>) -> Vec3<R> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale<R: Real>(a: Vec3<R>, s: R) -> Vec3<R> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn norm_sq<R: Real>(a: Vec3<R>) -> R {
    dot(a, a)
}

#[inline]
pub fn norm<R: Real>(a: Vec3<R>) -> R {
    norm_sq(a).sqrt()
}

/// Determinant of the matrix with rows `a`, `b`, `c`.
#[inline]
pub fn det3<R: Real>(a: Vec3<R>, b: Vec3<R>, c: Vec3<R>) -> R {
    dot(a, cross(b, c))
}

/// Solve the 3x3 system with rows `a`, `b`, `c` and right-hand side `rhs` by
/// Cramer's rule. Returns `None` when |det| <= `eps_det`.
pub fn solve3<R: Real>(
    a: Vec3<R>,
    b: Vec3<R>,
    c: Vec3<R>,
    rhs: Vec3<R>,
    eps_det: R,
) -> Option<Vec3<R>> {
    let d = det3(a, b, c);
    if d.abs() <= eps_det {
        return None;
    }
    // Column replacements, expressed through row determinants of the transposed system.
    let dx = det3(
        [rhs[0], a[1], a[2]],
        [rhs[1], b[1], b[2]],
        [rhs[2], c[1], c[2]],
    );
    let dy = det3(
        [a[0], rhs[0], a[2]],
        [b[0], rhs[1], b[2]],
        [c[0], rhs[2], c[2]],
    );
    let dz = det3(
        [a[0], a[1], rhs[0]],
        [b[0], b[1], rhs[1]],
        [c[0], c[1], rhs[2]],
    );
    Some([dx / d, dy / d, dz / d])
}
