//! The discrete Monge-Ampère operators and their Newton systems.
//!
//! Three schemes share one interface:
//!
//! - **polytope scheme** ([`apply_dv`]): the operator value at a point is the
//!   volume of the origin-symmetric polytope `{g : 2⟨g,e⟩ ≤ Δ_e u(x)}` cut by
//!   the stencil's second differences.  Monotone (degenerate elliptic) and
//!   differentiable, with Jacobian weights given by the polytope's facet
//!   areas.  Its Newton system is solved in log form.
//! - **difference-determinant scheme** ([`apply_fd`]): the determinant of the
//!   3×3 matrix of second differences, with off-diagonal entries from the
//!   four-point diagonal formula.  Consistent for any symmetric Hessian but
//!   not monotone; solved in linear form.
//! - **orthogonal-minimum scheme** ([`apply_ws`]): the minimum over a family
//!   of orthogonal lattice triplets of the product of clamped, normalized
//!   second differences.  Monotone but only piecewise smooth; solved in
//!   linear form with a generalized derivative (first minimizing triplet,
//!   zero where clamped).
//!
//! [`OperatorConfig`] pins a scheme to a grid (validating that the grid was
//! built with exactly the directions the scheme needs and caching the
//! direction-index resolution), applies the operator pointwise, and assembles
//! the residual and Jacobian of the full system map
//!
//! ```text
//! f(u)(x) = ln D u(x)   (or D u(x) for the linear-form schemes)   on interior x,
//! f(u)(x) = u(x)                                                  on boundary x,
//! ```
//!
//! as a sparse system ready for the damped Newton loop.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{Field, Grid};
use crate::lattice::{LatticeVector, OrthogonalTripletSet, Stencil};
use crate::polytope::{measure_polytope, OffsetFamily, PolytopeError};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Errors from operator application and system assembly.
#[derive(Debug, Error)]
pub enum OperatorError {
    /// The grid was built for a different direction set than the scheme needs.
    #[error("scheme `{scheme}` needs the grid to be built with stencil `{needed}`, but it was built with `{got}`")]
    StencilMismatch {
        scheme: String,
        needed: String,
        got: String,
    },
    /// A direction required by the scheme is missing from the grid stencil.
    /// Unreachable after [`OperatorConfig::new`] validation.
    #[error("direction {0} is not in the grid stencil")]
    MissingDirection(LatticeVector<3>),
    /// The iterate left the discrete convexity region: some second
    /// difference is non-positive, so the log-form system map is undefined.
    /// Carries the offending point and direction for the caller's line
    /// search.
    #[error("second difference at {point:?} along {dir} is {value:.6e} ≤ 0; iterate left the convexity region")]
    OutsideConvexityRegion {
        point: [i64; 3],
        dir: LatticeVector<3>,
        value: f64,
    },
    /// A polytope volume came out non-positive inside the convexity region;
    /// indicates catastrophic conditioning.  Never observed in practice.
    #[error("operator value {value:.6e} at {point:?} is not positive; log residual undefined")]
    NonPositiveValue { point: [i64; 3], value: f64 },
    /// The one-sided operator was asked for at a point with boundary
    /// neighbors; it is only defined where the full stencil stays interior.
    #[error("point {0:?} has boundary neighbors; the one-sided operator needs interior neighbors in every stencil direction")]
    NearBoundary([i64; 3]),
    /// The target vector does not match the grid's node count.
    #[error("target has {got} entries but the grid has {want} nodes")]
    TargetLength { got: usize, want: usize },
    /// Geometry failure from the polytope layer.
    #[error(transparent)]
    Geometry(#[from] PolytopeError),
}

// ---------------------------------------------------------------------------
// Schemes
// ---------------------------------------------------------------------------

/// Which discretization to solve.
#[derive(Debug, Clone)]
pub enum Scheme {
    /// The monotone polytope-volume scheme over a direction stencil.
    Proposed(Stencil<3>),
    /// The determinant-of-second-differences scheme (fixed 9-direction
    /// stencil).
    Fd,
    /// The orthogonal-triplet minimum scheme over a triplet family.
    Ws(OrthogonalTripletSet),
}

impl Scheme {
    /// The exact direction set a grid must be built with for this scheme.
    pub fn required_stencil(&self) -> Stencil<3> {
        match self {
            Scheme::Proposed(v) => v.clone(),
            Scheme::Fd => crate::lattice::fd_stencil(),
            Scheme::Ws(b) => b.directions(),
        }
    }

    /// Short label for reports and CSV rows (e.g. `proposed:small`, `fd`,
    /// `ws:medium`).
    pub fn label(&self) -> String {
        match self {
            Scheme::Proposed(v) => format!("proposed:{}", v.label()),
            Scheme::Fd => "fd".to_string(),
            Scheme::Ws(b) => format!("ws:{}", b.label()),
        }
    }

    /// Whether the Newton system uses the logarithm of the operator (the
    /// polytope scheme) rather than the raw value.
    pub fn is_log_form(&self) -> bool {
        matches!(self, Scheme::Proposed(_))
    }
}

/// Resolved direction indices for the difference-determinant scheme: the
/// three axes, and for each axis pair `(i,j)` the directions `eᵢ+eⱼ` and
/// `eᵢ−eⱼ`.  Pair order: (0,1), (0,2), (1,2).
#[derive(Debug, Clone, Copy)]
struct FdIndices {
    axis: [usize; 3],
    sum: [usize; 3],
    diff: [usize; 3],
}

#[derive(Debug, Clone)]
enum Resolved {
    Proposed,
    Fd(FdIndices),
    /// Per triplet, the grid-stencil indices of its three directions.
    Ws(Vec<[usize; 3]>),
}

/// A scheme bound to a grid, with direction lookups resolved once.
#[derive(Debug)]
pub struct OperatorConfig<'g, R: Real> {
    grid: &'g Grid<R>,
    scheme: Scheme,
    resolved: Resolved,
}

fn dir_index_of(stencil: &Stencil<3>, coords: [i64; 3]) -> Result<usize, OperatorError> {
    let v = LatticeVector::new(coords).expect("scheme directions are valid");
    stencil
        .dir_index(&v)
        .ok_or(OperatorError::MissingDirection(v))
}

fn resolve_fd(stencil: &Stencil<3>) -> Result<FdIndices, OperatorError> {
    let axes = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
    let sums = [[1, 1, 0], [1, 0, 1], [0, 1, 1]];
    let diffs = [[1, -1, 0], [1, 0, -1], [0, 1, -1]];
    let mut idx = FdIndices {
        axis: [0; 3],
        sum: [0; 3],
        diff: [0; 3],
    };
    for k in 0..3 {
        idx.axis[k] = dir_index_of(stencil, axes[k])?;
        idx.sum[k] = dir_index_of(stencil, sums[k])?;
        idx.diff[k] = dir_index_of(stencil, diffs[k])?;
    }
    Ok(idx)
}

fn resolve_ws(
    stencil: &Stencil<3>,
    set: &OrthogonalTripletSet,
) -> Result<Vec<[usize; 3]>, OperatorError> {
    set.triplets()
        .iter()
        .map(|t| {
            Ok([
                dir_index_of(stencil, t[0].coords())?,
                dir_index_of(stencil, t[1].coords())?,
                dir_index_of(stencil, t[2].coords())?,
            ])
        })
        .collect()
}

impl<'g, R: Real> OperatorConfig<'g, R> {
    /// Binds `scheme` to `grid`, checking that the grid's stencil is exactly
    /// the scheme's required direction set.
    pub fn new(scheme: Scheme, grid: &'g Grid<R>) -> Result<Self, OperatorError> {
        let needed = scheme.required_stencil();
        if needed.dirs() != grid.stencil().dirs() {
            return Err(OperatorError::StencilMismatch {
                scheme: scheme.label(),
                needed: needed.label().to_string(),
                got: grid.stencil().label().to_string(),
            });
        }
        let resolved = match &scheme {
            Scheme::Proposed(_) => Resolved::Proposed,
            Scheme::Fd => Resolved::Fd(resolve_fd(grid.stencil())?),
            Scheme::Ws(b) => Resolved::Ws(resolve_ws(grid.stencil(), b)?),
        };
        Ok(OperatorConfig {
            grid,
            scheme,
            resolved,
        })
    }

    pub fn grid(&self) -> &Grid<R> {
        self.grid
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn label(&self) -> String {
        self.scheme.label()
    }

    /// Operator value at interior point `x` (volume, determinant, or triplet
    /// minimum — always in domain units, never the logarithm).
    pub fn apply(&self, u: &Field<R>, x: u32) -> Result<R, OperatorError> {
        match &self.resolved {
            Resolved::Proposed => apply_dv(self.grid, u, x),
            Resolved::Fd(idx) => Ok(fd_value(self.grid, u, x, idx).0),
            Resolved::Ws(triplets) => Ok(ws_value(self.grid, u, x, triplets).0),
        }
    }

    /// Largest violation `max(ρ̂(x) − value(x), 0)` of positivity needed by
    /// the scheme's line search: for the monotone schemes an iterate is
    /// usable only while every second difference the operator consumes stays
    /// positive.  Returns the most negative second difference (or `+∞`-free
    /// equivalent: the minimum over all used differences).
    pub fn min_used_difference(&self, u: &Field<R>) -> R {
        let n_int = self.grid.n_interior() as u32;
        let mut min = R::infinity();
        for x in 0..n_int {
            for dir in 0..self.grid.stencil().len() {
                min = min.min(self.grid.second_difference(u, x, dir));
            }
        }
        min
    }

    /// Assembles the residual `f(u) − target` and the Jacobian of `f` at `u`.
    ///
    /// `target` is the full right-hand side over nodes: the (log-)density at
    /// interior nodes and the Dirichlet data at boundary nodes.  Interior
    /// rows are computed in parallel; boundary rows are identity rows with
    /// residual `u − target`.
    pub fn assemble(&self, u: &Field<R>, target: &[R]) -> Result<SparseSystem<R>, OperatorError> {
        let grid = self.grid;
        let n_nodes = grid.n_nodes();
        if target.len() != n_nodes {
            return Err(OperatorError::TargetLength {
                got: target.len(),
                want: n_nodes,
            });
        }
        let n_int = grid.n_interior();

        let interior: Result<Vec<(R, Vec<(u32, R)>)>, OperatorError> = (0..n_int as u32)
            .into_par_iter()
            .map(|x| self.interior_row(u, x, target))
            .collect();
        let interior = interior?;

        let mut residual = Vec::with_capacity(n_nodes);
        let mut rows: Vec<Vec<(u32, R)>> = Vec::with_capacity(n_nodes);
        for (r, row) in interior {
            residual.push(r);
            rows.push(row);
        }
        for b in n_int..n_nodes {
            residual.push(u[b] - target[b]);
            rows.push(vec![(b as u32, R::one())]);
        }
        Ok(SparseSystem {
            residual,
            jacobian: CsrMatrix::from_rows(rows),
            n_interior: n_int,
        })
    }

    /// Residual vector, Jacobian row, for one interior point.
    fn interior_row(
        &self,
        u: &Field<R>,
        x: u32,
        target: &[R],
    ) -> Result<(R, Vec<(u32, R)>), OperatorError> {
        match &self.resolved {
            Resolved::Proposed => self.proposed_row(u, x, target),
            Resolved::Fd(idx) => Ok(self.fd_row(u, x, target, idx)),
            Resolved::Ws(triplets) => Ok(self.ws_row(u, x, target, triplets)),
        }
    }

    fn proposed_row(
        &self,
        u: &Field<R>,
        x: u32,
        target: &[R],
    ) -> Result<(R, Vec<(u32, R)>), OperatorError> {
        let grid = self.grid;
        let stencil = grid.stencil();
        let point = grid.interior_points()[x as usize];

        let mut offsets = Vec::with_capacity(stencil.len());
        for (k, dir) in stencil.dirs().iter().enumerate() {
            let d = grid.second_difference(u, x, k);
            if !(d > R::zero()) {
                return Err(OperatorError::OutsideConvexityRegion {
                    point,
                    dir: *dir,
                    value: d.f64(),
                });
            }
            offsets.push(d);
        }
        let fam = OffsetFamily::new(stencil, offsets)?;
        let meas = measure_polytope(&fam)?;
        let vol = meas.volume;
        if !(vol > R::zero()) {
            return Err(OperatorError::NonPositiveValue {
                point,
                value: vol.f64(),
            });
        }

        let residual = vol.ln() - target[x as usize];
        let n2 = R::of(grid.n() as f64) * R::of(grid.n() as f64);
        let mut row: Vec<(u32, R)> = Vec::with_capacity(2 * stencil.len() + 1);
        let mut diag = R::zero();
        for (k, dir) in stencil.dirs().iter().enumerate() {
            let area = meas.facet_area[k];
            if area <= R::zero() {
                continue;
            }
            let norm = R::of(dir.norm_sq() as f64).sqrt();
            let pair = grid.step(x, k);
            let base = area * n2 / (norm * (pair.pos.h + pair.neg.h) * vol);
            let cp = base / pair.pos.h;
            let cm = base / pair.neg.h;
            row.push((pair.pos.neighbor, cp));
            row.push((pair.neg.neighbor, cm));
            diag -= cp + cm;
        }
        row.push((x, diag));
        Ok((residual, row))
    }

    fn fd_row(&self, u: &Field<R>, x: u32, target: &[R], idx: &FdIndices) -> (R, Vec<(u32, R)>) {
        let grid = self.grid;
        let (det, cof) = fd_value(grid, u, x, idx);
        let residual = det - target[x as usize];

        // d(det)/dΔ per stencil direction: the diagonal cofactor for axis
        // directions, ±cofactor/2 for the pair sums/differences (each
        // off-diagonal entry appears twice in the symmetric matrix and
        // carries a ¼ factor).
        let half = R::of(0.5);
        let weights = [
            (idx.axis[0], cof[0]),
            (idx.axis[1], cof[3]),
            (idx.axis[2], cof[5]),
            (idx.sum[0], cof[1] * half),
            (idx.sum[1], cof[2] * half),
            (idx.sum[2], cof[4] * half),
            (idx.diff[0], -cof[1] * half),
            (idx.diff[1], -cof[2] * half),
            (idx.diff[2], -cof[4] * half),
        ];
        let row = self.difference_chain_row(x, &weights);
        (residual, row)
    }

    fn ws_row(
        &self,
        u: &Field<R>,
        x: u32,
        target: &[R],
        triplets: &[[usize; 3]],
    ) -> (R, Vec<(u32, R)>) {
        let grid = self.grid;
        let (value, best) = ws_value(grid, u, x, triplets);
        let residual = value - target[x as usize];

        // Generalized derivative at the first minimizing triplet; clamped
        // directions contribute nothing.
        let t = triplets[best];
        let mut deltas = [R::zero(); 3];
        let mut norms = [R::zero(); 3];
        let mut clamped = [R::zero(); 3];
        for i in 0..3 {
            deltas[i] = grid.second_difference(u, x, t[i]);
            norms[i] = R::of(grid.stencil().dirs()[t[i]].norm_sq() as f64);
            clamped[i] = deltas[i].max(R::zero()) / norms[i];
        }
        let mut weights = Vec::with_capacity(3);
        for i in 0..3 {
            if deltas[i] > R::zero() {
                let others = clamped[(i + 1) % 3] * clamped[(i + 2) % 3];
                if others > R::zero() {
                    weights.push((t[i], others / norms[i]));
                }
            }
        }
        let row = self.difference_chain_row(x, &weights);
        (residual, row)
    }

    /// Chains per-direction derivative weights `w_e = ∂(value)/∂(Δ_e)`
    /// through the second-difference stencil to per-neighbor Jacobian
    /// entries.  The diagonal is the exact negative sum of the off-diagonal
    /// contributions (second differences annihilate constants).
    fn difference_chain_row(&self, x: u32, weights: &[(usize, R)]) -> Vec<(u32, R)> {
        let grid = self.grid;
        let n2 = R::of(grid.n() as f64) * R::of(grid.n() as f64);
        let two = R::of(2.0);
        let mut row: Vec<(u32, R)> = Vec::with_capacity(2 * weights.len() + 1);
        let mut diag = R::zero();
        for &(dir, w) in weights {
            let pair = grid.step(x, dir);
            let base = w * two * n2 / (pair.pos.h + pair.neg.h);
            let cp = base / pair.pos.h;
            let cm = base / pair.neg.h;
            row.push((pair.pos.neighbor, cp));
            row.push((pair.neg.neighbor, cm));
            diag -= cp + cm;
        }
        row.push((x, diag));
        row
    }
}

/// Assembled Newton system: residual `f(u) − target` and Jacobian `df(u)`
/// over the combined node indexing (interior rows first, then identity
/// boundary rows).
#[derive(Debug)]
pub struct SparseSystem<R> {
    pub residual: Vec<R>,
    pub jacobian: CsrMatrix<R>,
    pub n_interior: usize,
}

impl<R: Real> SparseSystem<R> {
    /// Sup norm of the residual.
    pub fn residual_norm(&self) -> R {
        self.residual.iter().fold(R::zero(), |m, r| m.max(r.abs()))
    }
}

// ---------------------------------------------------------------------------
// Pointwise operator applications
// ---------------------------------------------------------------------------

/// Polytope-volume operator at interior point `x`: the volume of
/// `{g : 2⟨g,e⟩ ≤ Δ_e u(x)}` over the grid's stencil.  Zero as soon as some
/// second difference is non-positive (the infeasible slab collapses the
/// polytope).
pub fn apply_dv<R: Real>(grid: &Grid<R>, u: &Field<R>, x: u32) -> Result<R, OperatorError> {
    Ok(apply_dv_measure(grid, u, x)?.volume)
}

/// Like [`apply_dv`], but returns facet areas along with the volume (the
/// Jacobian weights).
pub fn apply_dv_measure<R: Real>(
    grid: &Grid<R>,
    u: &Field<R>,
    x: u32,
) -> Result<crate::polytope::PolytopeMeasure<R>, OperatorError> {
    let stencil = grid.stencil();
    let offsets: Vec<R> = (0..stencil.len())
        .map(|k| grid.second_difference(u, x, k))
        .collect();
    if offsets.iter().any(|b| *b <= R::zero()) {
        return Ok(crate::polytope::PolytopeMeasure {
            volume: R::zero(),
            facet_area: vec![R::zero(); stencil.len()],
            nondegenerate: false,
        });
    }
    let fam = OffsetFamily::new(stencil, offsets)?;
    Ok(measure_polytope(&fam)?)
}

/// One-sided variant of the polytope operator for deep-interior diagnostics:
/// the volume of `{g : ⟨g,e⟩ ≤ n²(u(x+e/n) − u(x))}` over both signs of every
/// stencil direction.  Agrees with [`apply_dv`] on quadratics (the polytope
/// is a translate).  Errors at points with boundary neighbors.
pub fn apply_dv_asymmetric<R: Real>(
    grid: &Grid<R>,
    u: &Field<R>,
    x: u32,
) -> Result<R, OperatorError> {
    let stencil = grid.stencil();
    let point = grid.interior_points()[x as usize];
    let n_int = grid.n_interior() as u32;
    let n2 = R::of(grid.n() as f64) * R::of(grid.n() as f64);

    let mut rows = Vec::with_capacity(2 * stencil.len());
    let u0 = u[x as usize];
    for (k, dir) in stencil.dirs().iter().enumerate() {
        let pair = grid.step(x, k);
        if pair.pos.neighbor >= n_int || pair.neg.neighbor >= n_int {
            return Err(OperatorError::NearBoundary(point));
        }
        debug_assert!(pair.pos.h == R::one() && pair.neg.h == R::one());
        let e = dir.as_real::<R>();
        rows.push((e, n2 * (u[pair.pos.neighbor as usize] - u0)));
        rows.push((
            [-e[0], -e[1], -e[2]],
            n2 * (u[pair.neg.neighbor as usize] - u0),
        ));
    }
    match crate::polytope::halfspace_volume(&rows) {
        Ok(v) => Ok(v),
        // A non-convex sample can open the polytope in some direction; the
        // one-sided operator is 0 there only if empty, unbounded otherwise —
        // report unbounded as a geometry error.
        Err(e) => Err(OperatorError::Geometry(e)),
    }
}

/// Difference-determinant operator at interior point `x`.  The grid must
/// carry the 9-direction stencil of [`crate::lattice::fd_stencil`] (axes and
/// face diagonals); use [`OperatorConfig`] to validate once instead of per
/// call.
pub fn apply_fd<R: Real>(grid: &Grid<R>, u: &Field<R>, x: u32) -> Result<R, OperatorError> {
    let idx = resolve_fd(grid.stencil())?;
    Ok(fd_value(grid, u, x, &idx).0)
}

/// Orthogonal-triplet minimum operator at interior point `x`.  The grid must
/// contain every triplet direction.
pub fn apply_ws<R: Real>(
    grid: &Grid<R>,
    u: &Field<R>,
    x: u32,
    set: &OrthogonalTripletSet,
) -> Result<R, OperatorError> {
    let triplets = resolve_ws(grid.stencil(), set)?;
    Ok(ws_value(grid, u, x, &triplets).0)
}

/// Determinant and cofactors (upper-triangle order, matching
/// [`crate::matrix::SymMatrix`]) of the second-difference matrix at `x`.
fn fd_value<R: Real>(grid: &Grid<R>, u: &Field<R>, x: u32, idx: &FdIndices) -> (R, [R; 6]) {
    let quarter = R::of(0.25);
    let d00 = grid.second_difference(u, x, idx.axis[0]);
    let d11 = grid.second_difference(u, x, idx.axis[1]);
    let d22 = grid.second_difference(u, x, idx.axis[2]);
    let d01 = quarter
        * (grid.second_difference(u, x, idx.sum[0]) - grid.second_difference(u, x, idx.diff[0]));
    let d02 = quarter
        * (grid.second_difference(u, x, idx.sum[1]) - grid.second_difference(u, x, idx.diff[1]));
    let d12 = quarter
        * (grid.second_difference(u, x, idx.sum[2]) - grid.second_difference(u, x, idx.diff[2]));

    let c00 = d11 * d22 - d12 * d12;
    let c01 = d02 * d12 - d01 * d22;
    let c02 = d01 * d12 - d02 * d11;
    let c11 = d00 * d22 - d02 * d02;
    let c12 = d01 * d02 - d00 * d12;
    let c22 = d00 * d11 - d01 * d01;
    let det = d00 * c00 + d01 * c01 + d02 * c02;
    (det, [c00, c01, c02, c11, c12, c22])
}

/// Value and index of the first minimizing triplet.
fn ws_value<R: Real>(grid: &Grid<R>, u: &Field<R>, x: u32, triplets: &[[usize; 3]]) -> (R, usize) {
    let mut best = R::infinity();
    let mut best_idx = 0usize;
    for (ti, t) in triplets.iter().enumerate() {
        let mut prod = R::one();
        for &k in t {
            let d = grid.second_difference(u, x, k).max(R::zero());
            prod *= d / R::of(grid.stencil().dirs()[k].norm_sq() as f64);
        }
        if prod < best {
            best = prod;
            best_idx = ti;
        }
    }
    (best, best_idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::dot;
    use crate::grid::Domain;
    use crate::lattice::{fd_stencil, make_table1_stencil, make_ws_triplets, Table1Stencil};
    use crate::matrix::SymMatrix;
    use crate::polytope::measure_d_of_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn small() -> Stencil<3> {
        make_table1_stencil(Table1Stencil::Small)
    }

    fn cube(n: u32, v: &Stencil<3>) -> Grid<f64> {
        Grid::build(Domain::UnitCube, n, v).unwrap()
    }

    fn quadratic_field(g: &Grid<f64>, m: &SymMatrix<f64>) -> Field<f64> {
        Field::from_fn(g, |p| 0.5 * dot(p, m.mul_vec(p)))
    }

    use crate::bench::random_spd;

    #[test]
    fn dv_matches_the_matrix_functional_on_quadratics() {
        let v = small();
        let g = cube(4, &v);
        let mut rng = ChaCha8Rng::seed_from_u64(11);

        // Separable case: value equals the determinant everywhere.
        let m = SymMatrix::from_diag([1.0, 2.0, 3.0]);
        let u = quadratic_field(&g, &m);
        for x in 0..g.n_interior() as u32 {
            let d = apply_dv(&g, &u, x).unwrap();
            assert!((d - 6.0).abs() < 1e-9, "got {d}");
        }

        // Generic SPD: the pointwise value equals the matrix functional and
        // dominates the determinant.
        for _ in 0..10 {
            let m = random_spd(&mut rng, 0.3, 4.0);
            let u = quadratic_field(&g, &m);
            let want = measure_d_of_matrix(&m, &v);
            for x in 0..g.n_interior() as u32 {
                let d = apply_dv(&g, &u, x).unwrap();
                assert!((d - want).abs() <= 1e-8 * (1.0 + want));
                assert!(d >= m.det() - 1e-9);
            }
        }
    }

    #[test]
    fn dv_of_the_isotropic_quadratic_is_one() {
        for v in [small(), make_table1_stencil(Table1Stencil::Large)] {
            let g = cube(4, &v);
            let u = Field::from_fn(&g, |p| 0.5 * dot(p, p));
            for x in 0..g.n_interior() as u32 {
                let d = apply_dv(&g, &u, x).unwrap();
                assert!((d - 1.0).abs() < 1e-10, "got {d}");
            }
        }
    }

    #[test]
    fn dv_vanishes_on_saddles_and_ignores_affine_shifts() {
        let v = small();
        let g = cube(4, &v);
        let saddle = SymMatrix::from_diag([1.0, 1.0, -1.0]);
        let u = quadratic_field(&g, &saddle);
        for x in 0..g.n_interior() as u32 {
            assert_eq!(apply_dv(&g, &u, x).unwrap(), 0.0);
        }

        let m = SymMatrix::from_diag([2.0, 1.0, 0.5]);
        let u0 = quadratic_field(&g, &m);
        let u1 = Field::from_fn(&g, |p| {
            0.5 * dot(p, m.mul_vec(p)) + 3.0 - 2.0 * p[0] + 0.25 * p[1]
        });
        for x in 0..g.n_interior() as u32 {
            let a = apply_dv(&g, &u0, x).unwrap();
            let b = apply_dv(&g, &u1, x).unwrap();
            assert!((a - b).abs() < 1e-9 * (1.0 + a));
        }
    }

    #[test]
    fn fd_reproduces_determinants_of_any_sign() {
        let g = cube(4, &fd_stencil());
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            // Random symmetric matrix, indefinite allowed: the determinant
            // scheme is consistent (and sign-preserving) on all of them.
            let mut up = [0.0f64; 6];
            for v in &mut up {
                *v = rng.gen_range(-2.0..2.0);
            }
            let m = SymMatrix::from_upper(up);
            let u = quadratic_field(&g, &m);
            for x in 0..g.n_interior() as u32 {
                let d = apply_fd(&g, &u, x).unwrap();
                assert!(
                    (d - m.det()).abs() <= 1e-8 * (1.0 + m.det().abs()),
                    "got {d}, want {}",
                    m.det()
                );
            }
        }

        let affine = Field::from_fn(&g, |p| 1.0 + 2.0 * p[0] - p[2]);
        for x in 0..g.n_interior() as u32 {
            assert!(apply_fd(&g, &affine, x).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn ws_examples_and_hadamard_bound() {
        let set = make_ws_triplets(1).unwrap();
        let g = cube(4, &set.directions());

        // Diagonal metric: the axis triplet is an eigenbasis, so the scheme
        // is exact.
        let m = SymMatrix::from_diag([1.0, 2.0, 3.0]);
        let u = quadratic_field(&g, &m);
        for x in 0..g.n_interior() as u32 {
            let d = apply_ws(&g, &u, x, &set).unwrap();
            assert!((d - 6.0).abs() < 1e-9, "got {d}");
        }

        // Hadamard-type bound: every orthogonal triplet product dominates the
        // determinant, hence so does the minimum.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_spd(&mut rng, 0.2, 5.0);
            let u = quadratic_field(&g, &m);
            let x = g.find_interior([2, 2, 2]).unwrap();
            let d = apply_ws(&g, &u, x, &set).unwrap();
            assert!(d >= m.det() - 1e-9, "got {d} < det {}", m.det());
        }

        // Concave samples clamp to zero.
        let neg = quadratic_field(&g, &SymMatrix::from_diag([-1.0, -1.0, -1.0]));
        let x = g.find_interior([2, 2, 2]).unwrap();
        assert_eq!(apply_ws(&g, &neg, x, &set).unwrap(), 0.0);
    }

    #[test]
    fn asymmetric_variant_agrees_on_quadratics() {
        let v = small();
        let g = cube(6, &v);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = g.find_interior([3, 3, 3]).unwrap();

        for _ in 0..5 {
            let m = random_spd(&mut rng, 0.4, 3.0);
            // Affine parts translate the polytope without changing volume.
            let u = Field::from_fn(&g, |p| {
                0.5 * dot(p, m.mul_vec(p)) + 0.7 * p[0] - 0.3 * p[1] + 1.0
            });
            let sym = apply_dv(&g, &u, x).unwrap();
            let asym = apply_dv_asymmetric(&g, &u, x).unwrap();
            assert!(
                (sym - asym).abs() <= 1e-8 * (1.0 + sym),
                "sym {sym} vs asym {asym}"
            );
        }

        let u = Field::from_fn(&g, |p| 0.5 * dot(p, p) + p[0]);
        let one = apply_dv_asymmetric(&g, &u, x).unwrap();
        assert!((one - 1.0).abs() < 1e-9);

        // Boundary-adjacent points are rejected.
        let near = g.find_interior([1, 3, 3]).unwrap();
        assert!(matches!(
            apply_dv_asymmetric(&g, &u, near),
            Err(OperatorError::NearBoundary([1, 3, 3]))
        ));
    }

    #[test]
    fn config_validates_the_grid_stencil() {
        let g = cube(4, &small());
        assert!(OperatorConfig::new(Scheme::Proposed(small()), &g).is_ok());
        match OperatorConfig::new(Scheme::Fd, &g) {
            Err(OperatorError::StencilMismatch { scheme, .. }) => assert_eq!(scheme, "fd"),
            other => panic!("expected mismatch, got {other:?}"),
        }

        // The 9-direction determinant stencil coincides with the radius-1
        // triplet union, so either scheme binds to that grid.
        let g9 = cube(4, &fd_stencil());
        assert!(OperatorConfig::new(Scheme::Fd, &g9).is_ok());
        assert!(OperatorConfig::new(Scheme::Ws(make_ws_triplets(1).unwrap()), &g9).is_ok());
    }

    /// Shared FD-oracle check: dense Jacobian vs central differences of the
    /// assembled residual.
    fn check_jacobian(cfg: &OperatorConfig<'_, f64>, u: &Field<f64>, target: &[f64]) {
        let sys = cfg.assemble(u, target).unwrap();
        let n = cfg.grid().n_nodes();
        let eps = 1e-6;
        let mut dense = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            let (cols, vals) = sys.jacobian.row(i);
            for (c, v) in cols.iter().zip(vals) {
                dense[i][*c as usize] = *v;
            }
        }
        for j in 0..n {
            let mut up = u.clone();
            up[j] += eps;
            let rp = cfg.assemble(&up, target).unwrap().residual;
            let mut um = u.clone();
            um[j] -= eps;
            let rm = cfg.assemble(&um, target).unwrap().residual;
            for i in 0..n {
                let fd = (rp[i] - rm[i]) / (2.0 * eps);
                let err = (dense[i][j] - fd).abs();
                assert!(
                    err <= 1e-5 * (1.0 + dense[i][j].abs()),
                    "scheme {} entry ({i},{j}): jac {} vs fd {}",
                    cfg.label(),
                    dense[i][j],
                    fd
                );
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);

        // Polytope scheme in log form.
        let g = cube(4, &small());
        let mut u = Field::from_fn(&g, |p| 0.5 * dot(p, p));
        for v in u.values_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        let target = vec![0.0; g.n_nodes()];
        let cfg = OperatorConfig::new(Scheme::Proposed(small()), &g).unwrap();
        check_jacobian(&cfg, &u, &target);

        // Determinant scheme (linear form).
        let g9 = cube(4, &fd_stencil());
        let mut u9 = Field::from_fn(&g9, |p| 0.5 * dot(p, p));
        for v in u9.values_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        let t9 = vec![0.0; g9.n_nodes()];
        let cfg9 = OperatorConfig::new(Scheme::Fd, &g9).unwrap();
        check_jacobian(&cfg9, &u9, &t9);

        // Triplet-minimum scheme: keep the perturbation small so the
        // minimizing triplet has a safe margin (the map is only piecewise
        // smooth).
        let set = make_ws_triplets(1).unwrap();
        let gw = cube(4, &set.directions());
        let mquad = SymMatrix::from_diag([1.0, 2.0, 3.0]);
        let mut uw = quadratic_field(&gw, &mquad);
        for v in uw.values_mut() {
            *v += rng.gen_range(-1e-3..1e-3);
        }
        let tw = vec![0.0; gw.n_nodes()];
        let cfgw = OperatorConfig::new(Scheme::Ws(set), &gw).unwrap();
        check_jacobian(&cfgw, &uw, &tw);
    }

    #[test]
    fn proposed_rows_are_monotone_and_balanced() {
        let g = cube(4, &small());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut u = Field::from_fn(&g, |p| 0.5 * dot(p, p));
        for v in u.values_mut() {
            *v += rng.gen_range(-0.01..0.01);
        }
        let target = vec![0.0; g.n_nodes()];
        let cfg = OperatorConfig::new(Scheme::Proposed(small()), &g).unwrap();
        let sys = cfg.assemble(&u, &target).unwrap();

        for i in 0..g.n_nodes() {
            let (cols, vals) = sys.jacobian.row(i);
            if i < g.n_interior() {
                let mut diag = None;
                let mut off_sum = 0.0;
                for (c, v) in cols.iter().zip(vals) {
                    if *c as usize == i {
                        diag = Some(*v);
                    } else {
                        assert!(*v >= 0.0, "negative off-diagonal {v} in row {i}");
                        off_sum += v;
                    }
                }
                let diag = diag.expect("interior row has a diagonal");
                assert!(diag <= 0.0);
                assert!(
                    (diag + off_sum).abs() <= 1e-12 * off_sum.max(1.0),
                    "row {i} balance {diag} vs {off_sum}"
                );
            } else {
                assert_eq!(cols, &[i as u32]);
                assert_eq!(vals, &[1.0]);
            }
        }
    }

    #[test]
    fn every_interior_point_chains_to_the_boundary() {
        // Graph reachability through nonzero off-diagonals: from any interior
        // row there is a path to some boundary column.  Violations would make
        // the Jacobian singular.
        let cases: Vec<Grid<f64>> = vec![
            cube(4, &small()),
            Grid::build(
                Domain::Ball {
                    center: [0.5, 0.5, 0.5],
                    radius: 0.5,
                },
                6,
                &small(),
            )
            .unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for (ci, g) in cases.iter().enumerate() {
            // On the cube every step is 1, so small node noise keeps the
            // second differences positive; near the ball boundary tiny steps
            // amplify noise, so use an exact anisotropic quadratic there.
            let m = random_spd(&mut rng, 0.5, 2.0);
            let mut u = quadratic_field(g, &m);
            if ci == 0 {
                for v in u.values_mut() {
                    *v += rng.gen_range(-0.005..0.005);
                }
            }
            let target = vec![0.0; g.n_nodes()];
            let cfg = OperatorConfig::new(Scheme::Proposed(small()), g).unwrap();
            let sys = cfg.assemble(&u, &target).unwrap();

            let n_int = g.n_interior();
            let mut reaches: Vec<bool> = vec![false; n_int];
            let mut queue: VecDeque<usize> = VecDeque::new();
            // Reverse BFS: seed with interior rows directly touching a
            // boundary column.
            for i in 0..n_int {
                let (cols, vals) = sys.jacobian.row(i);
                if cols
                    .iter()
                    .zip(vals)
                    .any(|(c, v)| *c as usize >= n_int && *v != 0.0)
                {
                    reaches[i] = true;
                    queue.push_back(i);
                }
            }
            // Propagate backwards through interior-interior links.
            let mut touched = vec![Vec::new(); n_int];
            for i in 0..n_int {
                let (cols, vals) = sys.jacobian.row(i);
                for (c, v) in cols.iter().zip(vals) {
                    let c = *c as usize;
                    if c < n_int && c != i && *v != 0.0 {
                        touched[c].push(i);
                    }
                }
            }
            while let Some(j) = queue.pop_front() {
                for &i in &touched[j] {
                    if !reaches[i] {
                        reaches[i] = true;
                        queue.push_back(i);
                    }
                }
            }
            assert!(
                reaches.iter().all(|&r| r),
                "{} interior points cannot chain to the boundary",
                reaches.iter().filter(|&&r| !r).count()
            );
        }
    }

    #[test]
    fn residual_vanishes_on_exact_data() {
        let v = small();
        let g = cube(4, &v);
        let m = SymMatrix::from_diag([1.0, 2.0, 3.0]);
        let u = quadratic_field(&g, &m);
        let mut target = vec![0.0; g.n_nodes()];
        for x in 0..g.n_interior() {
            target[x] = 6.0f64.ln();
        }
        for b in g.n_interior()..g.n_nodes() {
            target[b] = u[b];
        }
        let cfg = OperatorConfig::new(Scheme::Proposed(v), &g).unwrap();
        let sys = cfg.assemble(&u, &target).unwrap();
        assert!(sys.residual_norm() < 1e-10, "norm {}", sys.residual_norm());
    }

    #[test]
    fn leaving_the_convexity_region_is_reported() {
        let g = cube(4, &small());
        let mut u = Field::from_fn(&g, |p| 0.5 * dot(p, p));
        // Dent the center enough to force a negative second difference.
        let mid = g.find_interior([2, 2, 2]).unwrap();
        u[mid as usize] -= 1.0;
        let target = vec![0.0; g.n_nodes()];
        let cfg = OperatorConfig::new(Scheme::Proposed(small()), &g).unwrap();
        match cfg.assemble(&u, &target) {
            Err(OperatorError::OutsideConvexityRegion { value, .. }) => assert!(value <= 0.0),
            other => panic!("expected convexity error, got {other:?}"),
        }
        assert!(cfg.min_used_difference(&u) < 0.0);
    }
}
