//! Incremental convex hull in three dimensions.
//!
//! Plain floating-point incremental insertion. Visibility is decided by signed
//! distance to the face plane against a caller-supplied length tolerance `eps`,
//! so the test is scale-consistent. The polytopes this crate builds are small,
//! centered, well-conditioned objects (a few dozen to a few hundred dual
//! points), so exact predicates are not needed.

use crate::geom::{cross, dot, norm, norm_sq, sub, Vec3};
use crate::scalar::Real;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HullError {
    /// Fewer than four affinely independent points (to tolerance).
    #[error("point set is degenerate (affinely dependent to tolerance)")]
    Degenerate,
    /// Floating-point visibility tests contradicted each other, leaving the
    /// partial surface without a matching twin for some directed edge. Seen
    /// only for badly scaled inputs; retry with a different tolerance.
    #[error("hull bookkeeping lost a twin edge (numerically inconsistent visibility)")]
    Inconsistent,
}

/// Convex hull faces as index triples into the input slice, oriented outward
/// (counter-clockwise seen from outside). Every directed edge occurs exactly
/// once, so the result is a closed 2-manifold. `eps` is a length: a point is
/// outside a face when its signed distance to the face plane exceeds `eps`.
pub fn convex_hull<R: Real>(pts: &[Vec3<R>], eps: R) -> Result<Vec<[u32; 3]>, HullError> {
    if pts.len() < 4 {
        return Err(HullError::Degenerate);
    }
    let (i0, i1, i2, i3) = initial_tetrahedron(pts, eps)?;

    struct Face<R> {
        v: [u32; 3],
        normal: Vec3<R>, // outward, not normalized
        normal_len: R,
        alive: bool,
    }
    let mut faces: Vec<Face<R>> = Vec::new();
    // Directed edge (a, b) -> index of the alive face containing it.
    let mut edge: HashMap<(u32, u32), usize> = HashMap::new();

    // Signed distance from p to the face plane, in length units.
    let signed_dist = |f: &Face<R>, p: Vec3<R>| -> R {
        dot(f.normal, sub(p, pts[f.v[0] as usize])) / f.normal_len
    };

    let add_face = |faces: &mut Vec<Face<R>>,
                    edge: &mut HashMap<(u32, u32), usize>,
                    v: [u32; 3]|
     -> Result<(), HullError> {
        let a = pts[v[0] as usize];
        let normal = cross(sub(pts[v[1] as usize], a), sub(pts[v[2] as usize], a));
        let normal_len = norm(normal);
        if !(normal_len > R::zero()) {
            return Err(HullError::Degenerate);
        }
        let id = faces.len();
        faces.push(Face {
            v,
            normal,
            normal_len,
            alive: true,
        });
        edge.insert((v[0], v[1]), id);
        edge.insert((v[1], v[2]), id);
        edge.insert((v[2], v[0]), id);
        Ok(())
    };

    // Seed tetrahedron, each face oriented away from the remaining vertex.
    for &(a, b, c, d) in &[
        (i0, i1, i2, i3),
        (i0, i3, i1, i2),
        (i0, i2, i3, i1),
        (i1, i3, i2, i0),
    ] {
        let mut v = [a as u32, b as u32, c as u32];
        let pa = pts[a];
        let n = cross(sub(pts[b], pa), sub(pts[c], pa));
        if dot(n, sub(pts[d], pa)) > R::zero() {
            v.swap(1, 2);
        }
        add_face(&mut faces, &mut edge, v)?;
    }

    for (p_idx, &p) in pts.iter().enumerate() {
        if p_idx == i0 || p_idx == i1 || p_idx == i2 || p_idx == i3 {
            continue;
        }
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&fi| faces[fi].alive && signed_dist(&faces[fi], p) > eps)
            .collect();
        if visible.is_empty() {
            continue;
        }
        // Horizon: directed edges of visible faces whose twin face is kept.
        let mut horizon: Vec<(u32, u32)> = Vec::new();
        for &fi in &visible {
            let v = faces[fi].v;
            for &(a, b) in &[(v[0], v[1]), (v[1], v[2]), (v[2], v[0])] {
                let twin = edge.get(&(b, a)).copied().ok_or(HullError::Inconsistent)?;
                if signed_dist(&faces[twin], p) <= eps {
                    horizon.push((a, b));
                }
            }
        }
        for &fi in &visible {
            let v = faces[fi].v;
            faces[fi].alive = false;
            edge.remove(&(v[0], v[1]));
            edge.remove(&(v[1], v[2]));
            edge.remove(&(v[2], v[0]));
        }
        for (a, b) in horizon {
            add_face(&mut faces, &mut edge, [a, b, p_idx as u32])?;
        }
    }

    Ok(faces.into_iter().filter(|f| f.alive).map(|f| f.v).collect())
}

/// Pick four affinely independent seed points: extreme pair on the widest axis,
/// the point farthest from their line, then from their plane.
fn initial_tetrahedron<R: Real>(
    pts: &[Vec3<R>],
    eps: R,
) -> Result<(usize, usize, usize, usize), HullError> {
    let mut best_spread = -R::one();
    let mut pair = (0usize, 0usize);
    for axis in 0..3 {
        let (mut lo, mut hi) = (0usize, 0usize);
        for (i, p) in pts.iter().enumerate() {
            if p[axis] < pts[lo][axis] {
                lo = i;
            }
            if p[axis] > pts[hi][axis] {
                hi = i;
            }
        }
        let spread = pts[hi][axis] - pts[lo][axis];
        if spread > best_spread {
            best_spread = spread;
            pair = (lo, hi);
        }
    }
    let (i0, i1) = pair;
    if best_spread <= eps {
        return Err(HullError::Degenerate);
    }

    let d01 = sub(pts[i1], pts[i0]);
    let mut i2 = usize::MAX;
    let mut best = R::zero();
    for (i, &p) in pts.iter().enumerate() {
        let d = norm_sq(cross(d01, sub(p, pts[i0])));
        if d > best {
            best = d;
            i2 = i;
        }
    }
    // best.sqrt() / |d01| is the distance of i2 from the line through i0, i1.
    if i2 == usize::MAX || best.sqrt() <= eps * norm(d01) {
        return Err(HullError::Degenerate);
    }

    let n = cross(d01, sub(pts[i2], pts[i0]));
    let mut i3 = usize::MAX;
    let mut best = R::zero();
    for (i, &p) in pts.iter().enumerate() {
        let d = dot(n, sub(p, pts[i0])).abs();
        if d > best {
            best = d;
            i3 = i;
        }
    }
    if i3 == usize::MAX || best <= eps * norm(n) {
        return Err(HullError::Degenerate);
    }
    Ok((i0, i1, i2, i3))
}
