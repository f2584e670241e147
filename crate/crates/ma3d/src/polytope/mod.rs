//! Volumes and facet areas of origin-symmetric halfspace intersections.
//!
//! The central object is the polytope
//!
//! ```text
//! K(b) = { g ∈ R³ : 2⟨g, e⟩ ≤ b_e  for all ±e in a direction family }
//! ```
//!
//! whose Lebesgue volume is the monotone operator value at a grid point and
//! whose facet areas drive the operator's Jacobian. Because `K(b)` is centrally
//! symmetric, it is computed by polar duality: the dual points `±2e/b_e` are
//! hulled, each hull facet corresponds to a primal vertex, and each hull vertex
//! corresponds to a primal facet, recovered by walking the hull's directed
//! edges around the vertex. Volume is the sum of cones over primal facets.
//!
//! The module also ships two independent routes used to cross-check the dual
//! construction: a general (asymmetric) vertex-enumeration volume and a
//! Monte-Carlo rejection-sampling estimate.

pub mod hull3;

use crate::geom::{cross, dot, norm, norm_sq, scale, solve3, sub, Vec3};
use crate::lattice::Stencil;
use crate::matrix::SymMatrix;
use crate::scalar::Real;
use hull3::{convex_hull, HullError};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolytopeError {
    #[error("offset for direction {index} is not finite")]
    NonFiniteOffset { index: usize },
    #[error("direction {index} is zero or not finite")]
    BadDirection { index: usize },
    #[error("got {offsets} offsets for {dirs} directions")]
    LengthMismatch { dirs: usize, offsets: usize },
    #[error("halfspace family does not bound a polytope")]
    Unbounded,
    #[error("cell construction failed numerically: {0}")]
    Numerical(String),
}

/// A direction family together with one offset per sign-identified direction:
/// the data defining `K(b) = {g : 2⟨g,e⟩ ≤ b_e}`. One offset serves both `e`
/// and `−e` because the second differences that feed it are even in `e`.
#[derive(Debug, Clone)]
pub struct OffsetFamily<'s, R: Real> {
    pub stencil: &'s Stencil<3>,
    pub offsets: Vec<R>,
}

impl<'s, R: Real> OffsetFamily<'s, R> {
    /// # Errors
    /// Rejects a family whose offset count disagrees with the stencil or whose
    /// offsets are not finite.
    pub fn new(stencil: &'s Stencil<3>, offsets: Vec<R>) -> Result<Self, PolytopeError> {
        if offsets.len() != stencil.len() {
            return Err(PolytopeError::LengthMismatch {
                dirs: stencil.len(),
                offsets: offsets.len(),
            });
        }
        if let Some(index) = offsets.iter().position(|b| !b.is_finite()) {
            return Err(PolytopeError::NonFiniteOffset { index });
        }
        Ok(Self { stencil, offsets })
    }
}

/// Volume and combined opposite-facet areas of a symmetric halfspace
/// intersection. `facet_area[i]` is the total (d−1)-measure of the facet pair
/// `F_e ∪ F_{−e}` for the i-th direction; the two are equal by symmetry.
#[derive(Debug, Clone)]
pub struct PolytopeMeasure<R: Real> {
    pub volume: R,
    pub facet_area: Vec<R>,
    pub nondegenerate: bool,
}

/// Full geometry of a symmetric halfspace intersection: measure plus primal
/// vertices and facet polygons, enough to dump the cell for inspection.
#[derive(Debug, Clone)]
pub struct SymmetricCell<R: Real> {
    pub volume: R,
    /// Combined area of the opposite-facet pair, indexed like the input
    /// directions. When several input directions are proportional the area is
    /// attributed to the one whose constraint is tightest.
    pub facet_area: Vec<R>,
    pub nondegenerate: bool,
    pub vertices: Vec<Vec3<R>>,
    pub facets: Vec<CellFacet>,
}

/// One facet of the cell: the input direction class it realizes, which sign of
/// the pair it is, and its vertex cycle (indices into `vertices`).
#[derive(Debug, Clone)]
pub struct CellFacet {
    pub class: usize,
    pub positive: bool,
    pub vertex_ids: Vec<u32>,
}

impl<R: Real> SymmetricCell<R> {
    fn degenerate(m: usize) -> Self {
        Self {
            volume: R::zero(),
            facet_area: vec![R::zero(); m],
            nondegenerate: false,
            vertices: Vec::new(),
            facets: Vec::new(),
        }
    }

    /// Render the cell as OFF-format text (vertices then facet polygons), with
    /// a comment line per facet naming its direction class and sign.
    pub fn to_off(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "OFF");
        let _ = writeln!(s, "{} {} 0", self.vertices.len(), self.facets.len());
        for v in &self.vertices {
            let _ = writeln!(
                s,
                "{:.17e} {:.17e} {:.17e}",
                v[0].f64(),
                v[1].f64(),
                v[2].f64()
            );
        }
        for f in &self.facets {
            let _ = writeln!(
                s,
                "# direction class {} ({})",
                f.class,
                if f.positive { "+" } else { "-" }
            );
            let _ = write!(s, "{}", f.vertex_ids.len());
            for id in &f.vertex_ids {
                let _ = write!(s, " {id}");
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Measure `{g : 2⟨g,e⟩ ≤ b_e}` for the family's directions and offsets.
///
/// # Errors
/// Propagates invalid offsets; `Unbounded` if the directions do not span.
pub fn measure_polytope<R: Real>(
    fam: &OffsetFamily<'_, R>,
) -> Result<PolytopeMeasure<R>, PolytopeError> {
    let normals: Vec<Vec3<R>> = fam.stencil.dirs().iter().map(|e| e.as_real()).collect();
    let cell = symmetric_cell(&normals, &fam.offsets)?;
    Ok(PolytopeMeasure {
        volume: cell.volume,
        facet_area: cell.facet_area,
        nondegenerate: cell.nondegenerate,
    })
}

/// The polytope functional of a symmetric matrix: volume of
/// `{g : 2⟨g,e⟩ ≤ ⟨e,Me⟩}` over the stencil. Equals `det M` exactly when `M`
/// is positive definite and the stencil resolves it; in general it is an upper
/// bound for `det M` on positive matrices and `0` as soon as some `⟨e,Me⟩ ≤ 0`.
///
/// # Panics
/// On non-finite matrix entries.
pub fn measure_d_of_matrix<R: Real>(m: &SymMatrix<R>, v: &Stencil<3>) -> R {
    let offsets: Vec<R> = v.dirs().iter().map(|e| m.quad(e.as_real())).collect();
    if offsets.iter().any(|b| *b <= R::zero()) {
        return R::zero();
    }
    let normals: Vec<Vec3<R>> = v.dirs().iter().map(|e| e.as_real()).collect();
    symmetric_cell(&normals, &offsets)
        .expect("a spanning stencil with positive finite offsets bounds a cell")
        .volume
}

/// Build the full geometry of `{g : 2|⟨g,n_i⟩| ≤ b_i}` from raw directions.
///
/// Any `b_i ≤ 0` short-circuits to the degenerate (empty-interior) cell.
/// Proportional directions are merged before hull construction and the merged
/// facet area is attributed to the tightest of them.
///
/// # Errors
/// `Unbounded` if the directions do not span R³; `BadDirection` /
/// `NonFiniteOffset` on invalid input; `Numerical` if vertex recovery fails.
pub fn symmetric_cell<R: Real>(
    normals: &[Vec3<R>],
    offsets: &[R],
) -> Result<SymmetricCell<R>, PolytopeError> {
    let m = normals.len();
    if offsets.len() != m {
        return Err(PolytopeError::LengthMismatch {
            dirs: m,
            offsets: offsets.len(),
        });
    }
    for (index, n) in normals.iter().enumerate() {
        if !n.iter().all(|c| c.is_finite()) || norm_sq(*n) == R::zero() {
            return Err(PolytopeError::BadDirection { index });
        }
    }
    if let Some(index) = offsets.iter().position(|b| !b.is_finite()) {
        return Err(PolytopeError::NonFiniteOffset { index });
    }
    if offsets.iter().any(|b| *b <= R::zero()) {
        return Ok(SymmetricCell::degenerate(m));
    }
    if m < 3 {
        return Err(PolytopeError::Unbounded);
    }

    // Merge proportional directions: group i joins group g when n_i × n_g
    // vanishes relative to |n_i||n_g|. The group keeps the smallest offset
    // rescaled to its representative's length.
    struct Group<R> {
        rep: usize,
        eff_b: R,
        tight: usize,
    }
    let merge_tol = R::of(1e-12);
    let mut groups: Vec<Group<R>> = Vec::new();
    'outer: for i in 0..m {
        let ni = normals[i];
        let len_i = norm(ni);
        for g in &mut groups {
            let nr = normals[g.rep];
            let len_r = norm(nr);
            if norm(cross(ni, nr)) <= merge_tol * len_i * len_r {
                let eff = offsets[i] * (len_r / len_i);
                if eff < g.eff_b {
                    g.eff_b = eff;
                    g.tight = i;
                }
                continue 'outer;
            }
        }
        groups.push(Group {
            rep: i,
            eff_b: offsets[i],
            tight: i,
        });
    }

    // Dual points ±2n/b. Indexing: dual 2k is +, dual 2k+1 is − for group k.
    let two = R::of(2.0);
    let mut duals: Vec<Vec3<R>> = Vec::with_capacity(2 * groups.len());
    for g in &groups {
        let q = scale(normals[g.rep], two / g.eff_b);
        duals.push(q);
        duals.push(scale(q, -R::one()));
    }
    let dual_scale = duals
        .iter()
        .map(|q| norm(*q))
        .fold(R::zero(), |a, b| if b > a { b } else { a });
    let group_tight: Vec<usize> = groups.iter().map(|g| g.tight).collect();

    // Hull tolerance ladder. Offsets that are *exact* ties (several dual
    // points on one face plane) hull cleanly at the tight tolerance, but
    // offsets perturbed a hair away from a tie split those planes into sliver
    // faces that break vertex recovery or the facet walks. Retrying with a
    // coarser tolerance re-merges the slivers into the intended face; the
    // coarser answer is only used when every tighter attempt failed, and its
    // relative volume error is of the order of the tolerance itself.
    let tight = {
        let e = R::epsilon() * R::of(256.0);
        let floor = R::of(1e-12);
        if e > floor {
            e
        } else {
            floor
        }
    };
    let mut last_err = PolytopeError::Unbounded;
    for eps_rel in [tight, R::of(1e-9), R::of(3e-8), R::of(1e-6)] {
        if eps_rel < tight {
            continue;
        }
        match cell_from_duals(&duals, dual_scale, &group_tight, m, eps_rel) {
            Ok(cell) => return Ok(cell),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// One hull-and-walk construction attempt at a fixed relative tolerance.
/// `duals` holds the paired points `±2n/b` (even index `2k` positive, odd
/// `2k+1` negative for group `k`); `group_tight[k]` is the input index whose
/// constraint is tightest in group `k`.
fn cell_from_duals<R: Real>(
    duals: &[Vec3<R>],
    dual_scale: R,
    group_tight: &[usize],
    m: usize,
    eps_rel: R,
) -> Result<SymmetricCell<R>, PolytopeError> {
    let faces = match convex_hull(duals, eps_rel * dual_scale) {
        Ok(f) => f,
        Err(HullError::Degenerate) => return Err(PolytopeError::Unbounded),
        Err(e @ HullError::Inconsistent) => return Err(PolytopeError::Numerical(e.to_string())),
    };

    // Primal vertex behind each hull face: the face plane ⟨y, u⟩ = c with the
    // origin strictly inside (c > 0) corresponds to the vertex u/c where the
    // three primal facet planes ⟨x, q⟩ = 1 meet. For spanning symmetric input
    // the origin is strictly interior, so a vanishing plane offset can only be
    // a sliver face — reported as `Unbounded` and retried coarser by the
    // caller.
    let mut face_vertex: Vec<Vec3<R>> = Vec::with_capacity(faces.len());
    for f in &faces {
        let a = duals[f[0] as usize];
        let u = cross(sub(duals[f[1] as usize], a), sub(duals[f[2] as usize], a));
        let c = dot(u, a);
        if !(c > R::of(1e-13) * norm(u) * dual_scale) {
            return Err(PolytopeError::Unbounded);
        }
        face_vertex.push(scale(u, R::one() / c));
    }

    // Directed-edge map and one seed face per hull vertex, for facet walks.
    let mut edge_map: HashMap<(u32, u32), u32> = HashMap::with_capacity(3 * faces.len());
    let mut seed_face: Vec<Option<u32>> = vec![None; duals.len()];
    for (fi, f) in faces.iter().enumerate() {
        for &(a, b) in &[(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edge_map.insert((a, b), fi as u32);
            seed_face[a as usize].get_or_insert(fi as u32);
        }
    }

    let mut vertices: Vec<Vec3<R>> = Vec::new();
    let mut face_vid: Vec<Option<u32>> = vec![None; faces.len()];
    let mut facets: Vec<CellFacet> = Vec::new();
    let mut group_area: Vec<R> = vec![R::zero(); group_tight.len()];
    let mut volume = R::zero();
    let half = R::of(0.5);
    let third = R::of(1.0 / 3.0);

    for (w, seed) in seed_face.iter().enumerate() {
        let Some(seed) = *seed else { continue };
        // Walk the hull faces around vertex w: from face (w, a, b), the next
        // face counter-clockwise is the one on the other side of edge (w, b).
        let mut cycle: Vec<u32> = Vec::new();
        let mut fi = seed;
        loop {
            cycle.push(fi);
            if cycle.len() > faces.len() + 1 {
                return Err(PolytopeError::Numerical(format!(
                    "facet walk around dual vertex {w} did not close"
                )));
            }
            let f = faces[fi as usize];
            let b = if f[0] == w as u32 {
                f[2]
            } else if f[1] == w as u32 {
                f[0]
            } else {
                f[1]
            };
            fi = *edge_map
                .get(&(w as u32, b))
                .ok_or_else(|| PolytopeError::Numerical(format!("open edge at dual vertex {w}")))?;
            if fi == seed {
                break;
            }
        }

        // Newell vector area of the primal polygon; exact for planar cycles.
        let poly: Vec<Vec3<R>> = cycle.iter().map(|&fi| face_vertex[fi as usize]).collect();
        let mut vec_area = [R::zero(); 3];
        for i in 0..poly.len() {
            let c = cross(poly[i], poly[(i + 1) % poly.len()]);
            for k in 0..3 {
                vec_area[k] += c[k];
            }
        }
        let area = half * norm(vec_area);
        let g = w / 2;
        group_area[g] += area;
        // Cone from the origin over this facet: the facet plane ⟨x, q_w⟩ = 1
        // lies at distance 1/|q_w| from the origin.
        volume += area * third / norm(duals[w]);

        let vertex_ids: Vec<u32> = cycle
            .iter()
            .map(|&fi| {
                *face_vid[fi as usize].get_or_insert_with(|| {
                    vertices.push(face_vertex[fi as usize]);
                    (vertices.len() - 1) as u32
                })
            })
            .collect();
        facets.push(CellFacet {
            class: group_tight[g],
            positive: w % 2 == 0,
            vertex_ids,
        });
    }

    let mut facet_area = vec![R::zero(); m];
    for (&tight, area) in group_tight.iter().zip(group_area) {
        facet_area[tight] = area;
    }
    Ok(SymmetricCell {
        volume,
        facet_area,
        nondegenerate: volume > R::zero(),
        vertices,
        facets,
    })
}

/// Volume of a general (not necessarily symmetric) halfspace intersection
/// `{g : ⟨g, n_i⟩ ≤ c_i}` by brute-force vertex enumeration: every triple of
/// planes is solved, feasible intersection points are hulled, and the volume
/// follows from the divergence theorem. Cubic in the family size — meant for
/// small families and as an independent cross-check of the dual route.
///
/// Returns 0 for empty or lower-dimensional feasible sets.
///
/// # Errors
/// `Unbounded` when fewer than four halfspaces are given (nothing to bound).
pub fn halfspace_volume<R: Real>(rows: &[(Vec3<R>, R)]) -> Result<R, PolytopeError> {
    if rows.len() < 4 {
        return Err(PolytopeError::Unbounded);
    }
    let feas_tol = R::of(1e-9);
    let det_tol = R::of(1e-10);
    let mut verts: Vec<Vec3<R>> = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            for k in (j + 1)..rows.len() {
                let (ni, ci) = rows[i];
                let (nj, cj) = rows[j];
                let (nk, ck) = rows[k];
                let eps_det = det_tol * norm(ni) * norm(nj) * norm(nk);
                let Some(v) = solve3(ni, nj, nk, [ci, cj, ck], eps_det) else {
                    continue;
                };
                let vn = norm(v);
                let feasible = rows
                    .iter()
                    .all(|&(n, c)| dot(n, v) <= c + feas_tol * (R::one() + c.abs() + norm(n) * vn));
                if feasible {
                    verts.push(v);
                }
            }
        }
    }
    if verts.len() < 4 {
        return Ok(R::zero());
    }
    let coord_scale = verts
        .iter()
        .map(|v| {
            v.iter()
                .fold(R::zero(), |a, c| if c.abs() > a { c.abs() } else { a })
        })
        .fold(R::zero(), |a, b| if b > a { b } else { a });
    let eps_rel = {
        let e = R::epsilon() * R::of(256.0);
        let floor = R::of(1e-12);
        if e > floor {
            e
        } else {
            floor
        }
    };
    let faces = match convex_hull(&verts, eps_rel * coord_scale) {
        Ok(f) => f,
        Err(HullError::Degenerate) => return Ok(R::zero()),
        Err(e @ HullError::Inconsistent) => return Err(PolytopeError::Numerical(e.to_string())),
    };
    // Divergence theorem about the centroid for numerical balance.
    let mut g = [R::zero(); 3];
    for v in &verts {
        for k in 0..3 {
            g[k] += v[k];
        }
    }
    let inv = R::one() / R::of(verts.len() as f64);
    for gk in &mut g {
        *gk *= inv;
    }
    let sixth = R::of(1.0 / 6.0);
    let vol: R = faces
        .iter()
        .map(|f| {
            crate::geom::det3(
                sub(verts[f[0] as usize], g),
                sub(verts[f[1] as usize], g),
                sub(verts[f[2] as usize], g),
            ) * sixth
        })
        .sum();
    Ok(vol.abs())
}

/// Monte-Carlo estimate of the volume of `{g : 2|⟨g,n_i⟩| ≤ b_i}` by rejection
/// sampling inside the parallelepiped cut out by three well-spread directions.
/// Independent of the hull machinery on purpose; used as a testing oracle.
pub fn monte_carlo_symmetric_volume(
    normals: &[[f64; 3]],
    offsets: &[f64],
    samples: u64,
    seed: u64,
) -> f64 {
    monte_carlo_symmetric_volume_stderr(normals, offsets, samples, seed).0
}

/// [`monte_carlo_symmetric_volume`] together with the estimator's standard
/// error (binomial, `box_vol · √(p̂(1−p̂)/N)`), so callers can assert
/// agreement at a statistically meaningful tolerance.
pub fn monte_carlo_symmetric_volume_stderr(
    normals: &[[f64; 3]],
    offsets: &[f64],
    samples: u64,
    seed: u64,
) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    assert_eq!(normals.len(), offsets.len());
    if offsets.iter().any(|&b| b <= 0.0) {
        return (0.0, 0.0);
    }
    // Greedy well-conditioned triple: longest normal, then the one most
    // orthogonal to it, then the one maximizing the triple product.
    let i1 = (0..normals.len())
        .max_by(|&a, &b| norm(normals[a]).partial_cmp(&norm(normals[b])).unwrap())
        .unwrap();
    let i2 = (0..normals.len())
        .max_by(|&a, &b| {
            norm(cross(normals[i1], normals[a]))
                .partial_cmp(&norm(cross(normals[i1], normals[b])))
                .unwrap()
        })
        .unwrap();
    let i3 = (0..normals.len())
        .max_by(|&a, &b| {
            crate::geom::det3(normals[i1], normals[i2], normals[a])
                .abs()
                .partial_cmp(&crate::geom::det3(normals[i1], normals[i2], normals[b]).abs())
                .unwrap()
        })
        .unwrap();
    let basis = [normals[i1], normals[i2], normals[i3]];
    let dets = crate::geom::det3(basis[0], basis[1], basis[2]).abs();
    if dets == 0.0 {
        return (0.0, 0.0);
    }
    // The sampling region {|⟨g,n_i⟩| ≤ b_i/2 for the three chosen i} is the
    // image of the box Π[−b_i/2, b_i/2] under the inverse basis map, so its
    // volume is Π b_i / |det|.
    let box_vol: f64 = offsets[i1] * offsets[i2] * offsets[i3] / dets;
    let half_b = [offsets[i1] / 2.0, offsets[i2] / 2.0, offsets[i3] / 2.0];

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..samples {
        let y = [
            rng.gen_range(-half_b[0]..half_b[0]),
            rng.gen_range(-half_b[1]..half_b[1]),
            rng.gen_range(-half_b[2]..half_b[2]),
        ];
        let Some(gp) = solve3(basis[0], basis[1], basis[2], y, 0.0) else {
            continue;
        };
        let inside = normals
            .iter()
            .zip(offsets)
            .all(|(&n, &b)| 2.0 * dot(n, gp).abs() <= b);
        if inside {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    let stderr = box_vol * (p * (1.0 - p) / samples as f64).sqrt();
    (box_vol * p, stderr)
}
