//! Discrete domains on a scaled integer lattice.
//!
//! A [`Grid`] fixes an open convex domain, a resolution `n`, and a direction
//! stencil, and precomputes everything the finite-difference operators need:
//! the interior lattice points of the scaled domain, the boundary points where
//! stencil rays exit, and for every (point, direction, sign) the step length
//! and neighbor index.  Coordinates are kept in lattice units internally (the
//! domain scaled by `n`), so all step lengths lie in `(0, 1]`; the `n²` factor
//! that converts second differences back to domain units is applied in
//! [`Grid::second_difference`] and nowhere else.
//!
//! Boundary points are deduplicated so that each geometric point is a single
//! unknown: exactly (by rational arithmetic) on the cube, and by rounding
//! coordinates to 1e-12 on the ball.

use std::collections::HashMap;
use std::fmt;
use std::io;

use num_rational::Rational64;
use thiserror::Error;

use crate::geom::Vec3;
use crate::lattice::Stencil;
use crate::scalar::Real;

/// Errors from grid construction and field I/O.
#[derive(Debug, Error)]
pub enum GridError {
    /// The resolution must be at least 2 so the interior is non-trivial.
    #[error("grid resolution must be at least 2, got {0}")]
    ResolutionTooSmall(u32),
    /// Ball domains need a strictly positive, finite radius.
    #[error("ball radius must be positive and finite, got {0}")]
    BadRadius(String),
    /// Ball centers must have finite coordinates.
    #[error("ball center must have finite coordinates, got {0}")]
    BadCenter(String),
    /// The scaled domain contains no interior lattice points.
    #[error("domain {domain} at resolution {n} has no interior lattice points")]
    EmptyInterior { domain: String, n: u32 },
    /// A field's value count does not match the grid it is paired with.
    #[error("field has {got} values but the grid has {want} nodes")]
    LengthMismatch { got: usize, want: usize },
    /// CSV layer failure (I/O or malformed framing).
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    /// A CSV record had the wrong shape or an unparsable entry.
    #[error("csv record {0}: {1}")]
    BadRecord(usize, String),
}

impl From<io::Error> for GridError {
    fn from(e: io::Error) -> Self {
        GridError::Csv(e.into())
    }
}

// ---------------------------------------------------------------------------
// Domains
// ---------------------------------------------------------------------------

/// An open, bounded, convex domain in `R³`.
///
/// Only the shapes the solver and benchmarks exercise are provided; both are
/// convex by construction, which the step computation relies on (a ray from an
/// interior point crosses the boundary exactly once).
#[derive(Debug, Clone, PartialEq)]
pub enum Domain<R: Real> {
    /// The open unit cube `(0,1)³`.
    UnitCube,
    /// The open ball of the given center and radius.
    Ball { center: Vec3<R>, radius: R },
}

impl<R: Real> Domain<R> {
    /// Diameter of the domain, used for a-priori solution bounds.
    pub fn diameter(&self) -> R {
        match self {
            Domain::UnitCube => R::of(3.0).sqrt(),
            Domain::Ball { radius, .. } => *radius + *radius,
        }
    }

    /// Strict membership test for a lattice point in the domain scaled by `n`.
    fn contains_lattice(&self, p: [i64; 3], n: u32) -> bool {
        match self {
            Domain::UnitCube => p.iter().all(|&c| 0 < c && c < n as i64),
            Domain::Ball { center, radius } => {
                let rho = *radius * R::of(n as f64);
                let mut d2 = R::zero();
                for i in 0..3 {
                    let d = R::of(p[i] as f64) - center[i] * R::of(n as f64);
                    d2 += d * d;
                }
                d2 < rho * rho
            }
        }
    }

    /// Inclusive lattice bounding box of the domain scaled by `n`.
    fn lattice_box(&self, n: u32) -> ([i64; 3], [i64; 3]) {
        match self {
            Domain::UnitCube => ([1, 1, 1], [n as i64 - 1; 3]),
            Domain::Ball { center, radius } => {
                let mut lo = [0i64; 3];
                let mut hi = [0i64; 3];
                for i in 0..3 {
                    let c = center[i].f64() * n as f64;
                    let r = radius.f64() * n as f64;
                    lo[i] = (c - r).floor() as i64;
                    hi[i] = (c + r).ceil() as i64;
                }
                (lo, hi)
            }
        }
    }
}

impl<R: Real> fmt::Display for Domain<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::UnitCube => write!(f, "unit_cube"),
            Domain::Ball { center, radius } => write!(
                f,
                "ball(center=({}, {}, {}), radius={})",
                center[0], center[1], center[2], radius
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// One directed step from an interior point: length and neighbor.
///
/// `neighbor` indexes the combined node list: values below the interior count
/// are interior points, the rest are boundary points (offset by the interior
/// count).
#[derive(Debug, Clone, Copy)]
pub struct Step<R> {
    /// Step length in lattice units, in `(0, 1]`.
    pub h: R,
    /// Combined node index of the point reached.
    pub neighbor: u32,
}

/// The two steps (positive and negative direction) of one stencil direction.
#[derive(Debug, Clone, Copy)]
pub struct StepPair<R> {
    pub pos: Step<R>,
    pub neg: Step<R>,
}

/// A discretized domain: interior lattice points, boundary exit points, and
/// the per-direction step table.
///
/// Node indexing is combined: indices `0..n_interior()` are interior points,
/// `n_interior()..n_nodes()` are boundary points.  A [`Field`] stores one
/// value per node in this order.
#[derive(Debug, Clone)]
pub struct Grid<R: Real> {
    domain: Domain<R>,
    n: u32,
    stencil: Stencil<3>,
    interior: Vec<[i64; 3]>,
    interior_index: HashMap<[i64; 3], u32>,
    /// Boundary points in lattice units (on the scaled domain boundary).
    boundary: Vec<Vec3<R>>,
    /// Flat step table, `interior.len() * stencil.len()` entries, direction
    /// index fastest.
    steps: Vec<StepPair<R>>,
    sup_step: R,
}

/// Key for boundary-point deduplication.
///
/// Cube exits are exact rationals, so equal points collide exactly; ball exits
/// are floating-point and are bucketed by rounding to 1e-12 lattice units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum BoundaryKey {
    Exact([(i64, i64); 3]),
    Rounded([i128; 3]),
}

impl<R: Real> Grid<R> {
    /// Builds the grid for `domain` scaled by `n`, with steps for every
    /// direction of `stencil`.
    ///
    /// Fails if `n < 2`, if a ball domain is malformed, or if the scaled
    /// domain contains no lattice points.
    pub fn build(domain: Domain<R>, n: u32, stencil: &Stencil<3>) -> Result<Self, GridError> {
        if n < 2 {
            return Err(GridError::ResolutionTooSmall(n));
        }
        if let Domain::Ball { center, radius } = &domain {
            if !(radius.f64() > 0.0) || !radius.f64().is_finite() {
                return Err(GridError::BadRadius(format!("{radius}")));
            }
            if center.iter().any(|c| !c.f64().is_finite()) {
                return Err(GridError::BadCenter(format!(
                    "({}, {}, {})",
                    center[0], center[1], center[2]
                )));
            }
        }

        // Interior points, in lexicographic order for deterministic indexing.
        let (lo, hi) = domain.lattice_box(n);
        let mut interior = Vec::new();
        for x0 in lo[0]..=hi[0] {
            for x1 in lo[1]..=hi[1] {
                for x2 in lo[2]..=hi[2] {
                    let p = [x0, x1, x2];
                    if domain.contains_lattice(p, n) {
                        interior.push(p);
                    }
                }
            }
        }
        if interior.is_empty() {
            return Err(GridError::EmptyInterior {
                domain: domain.to_string(),
                n,
            });
        }
        let n_int = interior.len();
        let interior_index: HashMap<[i64; 3], u32> = interior
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i as u32))
            .collect();

        // Steps and boundary points.  Boundary points are created on first
        // hit and shared by every ray that exits at the same geometric point.
        let mut boundary: Vec<Vec3<R>> = Vec::new();
        let mut boundary_index: HashMap<BoundaryKey, u32> = HashMap::new();
        let mut steps = Vec::with_capacity(n_int * stencil.len());
        let mut sup_step = R::zero();

        for &x in &interior {
            for dir in stencil.dirs() {
                let e = dir.coords();
                let mut signed = |sign: i64| -> Step<R> {
                    let se = [sign * e[0], sign * e[1], sign * e[2]];
                    let t = [x[0] + se[0], x[1] + se[1], x[2] + se[2]];
                    if let Some(&idx) = interior_index.get(&t) {
                        return Step {
                            h: R::one(),
                            neighbor: idx,
                        };
                    }
                    let (h, point, key) = boundary_exit(&domain, n, x, se);
                    let bidx = *boundary_index.entry(key).or_insert_with(|| {
                        boundary.push(point);
                        (boundary.len() - 1) as u32
                    });
                    Step {
                        h,
                        neighbor: n_int as u32 + bidx,
                    }
                };
                let pair = StepPair {
                    pos: signed(1),
                    neg: signed(-1),
                };
                sup_step = sup_step.max(pair.pos.h).max(pair.neg.h);
                steps.push(pair);
            }
        }

        assert!(
            n_int + boundary.len() <= u32::MAX as usize,
            "grid too large for 32-bit node indices"
        );
        Ok(Grid {
            domain,
            n,
            stencil: stencil.clone(),
            interior,
            interior_index,
            boundary,
            steps,
            sup_step,
        })
    }

    /// The domain this grid discretizes.
    pub fn domain(&self) -> &Domain<R> {
        &self.domain
    }

    /// Resolution: the lattice spacing in domain units is `1/n`.
    pub fn n(&self) -> u32 {
        self.n
    }

    /// The stencil the step table was built for.
    pub fn stencil(&self) -> &Stencil<3> {
        &self.stencil
    }

    /// Number of interior points.
    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    /// Number of boundary points.
    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    /// Total node count (interior + boundary).
    pub fn n_nodes(&self) -> usize {
        self.interior.len() + self.boundary.len()
    }

    /// Interior lattice points, in index order.
    pub fn interior_points(&self) -> &[[i64; 3]] {
        &self.interior
    }

    /// Boundary points in lattice units, in index order.
    pub fn boundary_points(&self) -> &[Vec3<R>] {
        &self.boundary
    }

    /// Index of an interior lattice point, if present.
    pub fn find_interior(&self, p: [i64; 3]) -> Option<u32> {
        self.interior_index.get(&p).copied()
    }

    /// Step pair of interior point `x` (interior index) along stencil
    /// direction `dir` (index into `self.stencil().dirs()`).
    pub fn step(&self, x: u32, dir: usize) -> &StepPair<R> {
        &self.steps[x as usize * self.stencil.len() + dir]
    }

    /// Largest step length over all points and directions.
    ///
    /// Equals 1 whenever some interior point has an interior neighbor, which
    /// is the case for every domain at usable resolutions.
    pub fn sup_step(&self) -> R {
        self.sup_step
    }

    /// Position of a combined node index in lattice units.
    pub fn node_position(&self, idx: u32) -> Vec3<R> {
        let i = idx as usize;
        if i < self.interior.len() {
            let p = self.interior[i];
            [R::of(p[0] as f64), R::of(p[1] as f64), R::of(p[2] as f64)]
        } else {
            self.boundary[i - self.interior.len()]
        }
    }

    /// Position of a combined node index in domain units (lattice / n).
    pub fn physical_position(&self, idx: u32) -> Vec3<R> {
        let p = self.node_position(idx);
        let inv = R::one() / R::of(self.n as f64);
        [p[0] * inv, p[1] * inv, p[2] * inv]
    }

    /// Second difference of `u` at interior point `x` along stencil direction
    /// `dir`, in domain units.
    ///
    /// With step lengths `h⁺`, `h⁻` and neighbor values `u⁺`, `u⁻` this is
    ///
    /// ```text
    /// n² · 2/(h⁺+h⁻) · [ (u⁺ − u(x))/h⁺ + (u⁻ − u(x))/h⁻ ]
    /// ```
    ///
    /// which reduces to the centered difference `n²(u⁺ − 2u(x) + u⁻)` when
    /// both steps are 1, and is exact on quadratics for any step lengths.
    /// This is the only place the `n²` domain-unit scaling enters.
    pub fn second_difference(&self, u: &Field<R>, x: u32, dir: usize) -> R {
        let pair = self.step(x, dir);
        let u0 = u.values[x as usize];
        let up = u.values[pair.pos.neighbor as usize];
        let um = u.values[pair.neg.neighbor as usize];
        let two = R::of(2.0);
        let n2 = R::of(self.n as f64) * R::of(self.n as f64);
        n2 * two / (pair.pos.h + pair.neg.h) * ((up - u0) / pair.pos.h + (um - u0) / pair.neg.h)
    }

    /// Writes the node list as CSV (`index,x,y,z,kind`), coordinates in
    /// domain units.
    pub fn to_csv<W: io::Write>(&self, w: W) -> Result<(), GridError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "x", "y", "z", "kind"])?;
        for idx in 0..self.n_nodes() as u32 {
            let p = self.physical_position(idx);
            let kind = if (idx as usize) < self.n_interior() {
                "interior"
            } else {
                "boundary"
            };
            wtr.write_record([
                idx.to_string(),
                p[0].f64().to_string(),
                p[1].f64().to_string(),
                p[2].f64().to_string(),
                kind.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// First boundary crossing of the ray `x + h·e`, `h > 0`, out of the scaled
/// domain.  Returns the step length, the exit point, and its dedup key.
///
/// Only called when `x + e` is not interior, so convexity guarantees the
/// crossing satisfies `0 < h ≤ 1`.
fn boundary_exit<R: Real>(
    domain: &Domain<R>,
    n: u32,
    x: [i64; 3],
    e: [i64; 3],
) -> (R, Vec3<R>, BoundaryKey) {
    match domain {
        Domain::UnitCube => {
            // Exact rational exit: the smallest h at which some coordinate
            // reaches a face.  Edge and corner hits need no special case.
            let n = n as i64;
            let mut h: Option<Rational64> = None;
            for i in 0..3 {
                if e[i] == 0 {
                    continue;
                }
                let cand = if e[i] > 0 {
                    Rational64::new(n - x[i], e[i])
                } else {
                    Rational64::new(x[i], -e[i])
                };
                h = Some(match h {
                    Some(best) => best.min(cand),
                    None => cand,
                });
            }
            let h = h.expect("stencil directions are nonzero");
            let mut point = [R::zero(); 3];
            let mut key = [(0i64, 0i64); 3];
            for i in 0..3 {
                let c = Rational64::from_integer(x[i]) + h * Rational64::from_integer(e[i]);
                key[i] = (*c.numer(), *c.denom());
                point[i] = R::of(*c.numer() as f64) / R::of(*c.denom() as f64);
            }
            let h = R::of(*h.numer() as f64) / R::of(*h.denom() as f64);
            (h, point, BoundaryKey::Exact(key))
        }
        Domain::Ball { center, radius } => {
            // Positive root of ‖x + h e − q‖² = ρ², via the branch of the
            // quadratic formula that avoids cancellation.
            let nf = R::of(n as f64);
            let rho = *radius * nf;
            let mut a = R::zero();
            let mut b = R::zero();
            let mut c = -rho * rho;
            for i in 0..3 {
                let ei = R::of(e[i] as f64);
                let di = R::of(x[i] as f64) - center[i] * nf;
                a += ei * ei;
                b += R::of(2.0) * ei * di;
                c += di * di;
            }
            let disc = (b * b - R::of(4.0) * a * c).max(R::zero());
            let h = if b >= R::zero() {
                -(c + c) / (b + disc.sqrt())
            } else {
                (-b + disc.sqrt()) / (a + a)
            };
            // x is strictly interior and x+e is not, so h ∈ (0, 1] up to
            // rounding; clamp to keep the step-table invariant exact.
            let h = h.min(R::one());
            debug_assert!(h > R::zero(), "interior point produced a zero step");
            let mut point = [R::zero(); 3];
            let mut key = [0i128; 3];
            for i in 0..3 {
                point[i] = R::of(x[i] as f64) + h * R::of(e[i] as f64);
                key[i] = (point[i].f64() * 1e12).round() as i128;
            }
            (h, point, BoundaryKey::Rounded(key))
        }
    }
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// A scalar field over the nodes of a grid: one value per interior point
/// followed by one per boundary point, in grid index order.
///
/// Fields do not hold a reference to their grid; constructors take the grid
/// to fix the length, and operations that need geometry take it again.  This
/// keeps fields plain value types that are cheap to clone and send across
/// threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<R> {
    values: Vec<R>,
}

impl<R: Real> Field<R> {
    /// A field of zeros over `grid`.
    pub fn zeros(grid: &Grid<R>) -> Self {
        Field {
            values: vec![R::zero(); grid.n_nodes()],
        }
    }

    /// Evaluates `f` at the physical (domain-unit) position of every node.
    pub fn from_fn<F: Fn(Vec3<R>) -> R>(grid: &Grid<R>, f: F) -> Self {
        let values = (0..grid.n_nodes() as u32)
            .map(|idx| f(grid.physical_position(idx)))
            .collect();
        Field { values }
    }

    /// Wraps an existing value vector, checking its length against the grid.
    pub fn from_values(grid: &Grid<R>, values: Vec<R>) -> Result<Self, GridError> {
        if values.len() != grid.n_nodes() {
            return Err(GridError::LengthMismatch {
                got: values.len(),
                want: grid.n_nodes(),
            });
        }
        Ok(Field { values })
    }

    /// All values, interior then boundary, in grid index order.
    pub fn values(&self) -> &[R] {
        &self.values
    }

    /// Mutable access to all values.
    pub fn values_mut(&mut self) -> &mut [R] {
        &mut self.values
    }

    /// Number of values (equals the grid's node count).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Whether the field is empty (never true for a built grid).
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest absolute difference to another field.
    pub fn linf_distance(&self, other: &Field<R>) -> R {
        self.values
            .iter()
            .zip(&other.values)
            .fold(R::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Writes the field as CSV (`index,x,y,z,value`), coordinates in domain
    /// units.
    pub fn to_csv<W: io::Write>(&self, grid: &Grid<R>, w: W) -> Result<(), GridError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "x", "y", "z", "value"])?;
        for (idx, v) in self.values.iter().enumerate() {
            let p = grid.physical_position(idx as u32);
            wtr.write_record([
                idx.to_string(),
                p[0].f64().to_string(),
                p[1].f64().to_string(),
                p[2].f64().to_string(),
                v.f64().to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a field written by [`Field::to_csv`].  Records may appear in any
    /// order; every node index must appear exactly once.  Coordinates are
    /// ignored on load.
    pub fn from_csv<Rd: io::Read>(grid: &Grid<R>, r: Rd) -> Result<Self, GridError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut values: Vec<Option<R>> = vec![None; grid.n_nodes()];
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(GridError::BadRecord(
                    line,
                    format!("expected 5 fields, got {}", rec.len()),
                ));
            }
            let idx: usize = rec[0]
                .parse()
                .map_err(|e| GridError::BadRecord(line, format!("bad index: {e}")))?;
            if idx >= values.len() {
                return Err(GridError::BadRecord(
                    line,
                    format!("index {idx} out of range for {} nodes", values.len()),
                ));
            }
            if values[idx].is_some() {
                return Err(GridError::BadRecord(line, format!("duplicate index {idx}")));
            }
            let v: f64 = rec[4]
                .parse()
                .map_err(|e| GridError::BadRecord(line, format!("bad value: {e}")))?;
            values[idx] = Some(R::of(v));
        }
        let mut out = Vec::with_capacity(values.len());
        for (idx, v) in values.into_iter().enumerate() {
            match v {
                Some(v) => out.push(v),
                None => {
                    return Err(GridError::BadRecord(0, format!("missing index {idx}")));
                }
            }
        }
        Ok(Field { values: out })
    }
}

impl<R> std::ops::Index<usize> for Field<R> {
    type Output = R;
    fn index(&self, i: usize) -> &R {
        &self.values[i]
    }
}

impl<R> std::ops::IndexMut<usize> for Field<R> {
    fn index_mut(&mut self, i: usize) -> &mut R {
        &mut self.values[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_table1_stencil, LatticeVector, Table1Stencil};
    use crate::matrix::SymMatrix;

    fn small() -> Stencil<3> {
        make_table1_stencil(Table1Stencil::Small)
    }

    fn large() -> Stencil<3> {
        make_table1_stencil(Table1Stencil::Large)
    }

    fn cube(n: u32, v: &Stencil<3>) -> Grid<f64> {
        Grid::build(Domain::UnitCube, n, v).unwrap()
    }

    #[test]
    fn cube_interior_count_is_cubic() {
        // The open cube scaled by n contains exactly (n-1)³ lattice points,
        // and doubling n multiplies the count by about 2³.
        let v = small();
        assert_eq!(cube(4, &v).n_interior(), 27);
        assert_eq!(cube(8, &v).n_interior(), 343);
        assert_eq!(cube(2, &v).n_interior(), 1);
    }

    #[test]
    fn interior_neighbor_has_unit_step() {
        let v = small();
        let g = cube(4, &v);
        let x = g.find_interior([2, 2, 2]).unwrap();
        let dir = g
            .stencil()
            .dir_index(&LatticeVector::new([1, 1, 1]).unwrap())
            .unwrap();
        let s = g.step(x, dir);
        assert_eq!(s.pos.h, 1.0);
        assert_eq!(s.pos.neighbor, g.find_interior([3, 3, 3]).unwrap());
        assert_eq!(s.neg.h, 1.0);
        assert_eq!(s.neg.neighbor, g.find_interior([1, 1, 1]).unwrap());
    }

    #[test]
    fn cube_axis_exit_hits_face() {
        // From (1,1,1) the step along -(1,0,0) exits the scaled cube at
        // (0,1,1) with step length 1.
        let v = small();
        let g = cube(4, &v);
        let x = g.find_interior([1, 1, 1]).unwrap();
        let dir = g
            .stencil()
            .dir_index(&LatticeVector::new([1, 0, 0]).unwrap())
            .unwrap();
        let s = g.step(x, dir);
        assert_eq!(s.neg.h, 1.0);
        assert!(s.neg.neighbor as usize >= g.n_interior());
        let p = g.node_position(s.neg.neighbor);
        assert_eq!(p, [0.0, 1.0, 1.0]);
    }

    #[test]
    fn cube_oblique_exit_is_exact_rational() {
        // From (1,1,1) along (-2,1,0): the first face hit is x₀ = 0 at
        // h = 1/2, giving the boundary point (0, 3/2, 1).  The direction
        // (-2,1,0) is the negative side of the canonical direction (2,-1,0).
        let v = large();
        let g = cube(4, &v);
        let x = g.find_interior([1, 1, 1]).unwrap();
        let dir = g
            .stencil()
            .dir_index(&LatticeVector::new([2, -1, 0]).unwrap())
            .unwrap();
        let s = g.step(x, dir);
        assert_eq!(s.neg.h, 0.5);
        let p = g.node_position(s.neg.neighbor);
        assert_eq!(p, [0.0, 1.5, 1.0]);
    }

    #[test]
    fn boundary_points_are_deduplicated_and_on_the_boundary() {
        let v = large();
        let g = cube(4, &v);
        // Every boundary point lies on a face of the scaled cube.
        for p in g.boundary_points() {
            let on_face = p.iter().any(|&c| c == 0.0 || c == 4.0);
            let inside_closed = p.iter().all(|&c| (0.0..=4.0).contains(&c));
            assert!(
                on_face && inside_closed,
                "{p:?} is not on the cube boundary"
            );
        }
        // Exact deduplication: no two boundary points coincide.
        for (i, p) in g.boundary_points().iter().enumerate() {
            for q in &g.boundary_points()[i + 1..] {
                let d = (0..3).map(|k| (p[k] - q[k]).abs()).fold(0.0, f64::max);
                assert!(d > 1e-9, "duplicate boundary points {p:?} and {q:?}");
            }
        }
        // Steps land where they claim to: x + h·e equals the neighbor.
        for (xi, &x) in g.interior_points().iter().enumerate() {
            for (di, dir) in g.stencil().dirs().iter().enumerate() {
                let e = dir.coords();
                let s = g.step(xi as u32, di);
                for (sign, st) in [(1.0, s.pos), (-1.0, s.neg)] {
                    assert!(st.h > 0.0 && st.h <= 1.0);
                    let p = g.node_position(st.neighbor);
                    for k in 0..3 {
                        let want = x[k] as f64 + sign * st.h * e[k] as f64;
                        assert!((p[k] - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn ball_boundary_points_lie_on_the_sphere() {
        let v = small();
        let center = [0.5, 0.5, 0.5];
        let radius = 0.5;
        let g: Grid<f64> = Grid::build(Domain::Ball { center, radius }, 8, &v).unwrap();
        assert!(g.n_interior() > 0);
        let rho = radius * 8.0;
        for p in g.boundary_points() {
            let d = (0..3)
                .map(|k| (p[k] - center[k] * 8.0).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(
                (d - rho).abs() < 1e-12,
                "boundary point off sphere by {}",
                d - rho
            );
        }
        assert!(g.sup_step() > 0.0 && g.sup_step() <= 1.0);
    }

    #[test]
    fn ball_interior_matches_direct_count() {
        let center = [0.5, 0.5, 0.5];
        let radius = 0.5;
        let n = 8u32;
        let g: Grid<f64> = Grid::build(Domain::Ball { center, radius }, n, &small()).unwrap();
        let mut count = 0;
        for x0 in -1..=9_i64 {
            for x1 in -1..=9_i64 {
                for x2 in -1..=9_i64 {
                    let d2: f64 = [x0, x1, x2]
                        .iter()
                        .zip(center)
                        .map(|(&c, q)| (c as f64 - q * n as f64).powi(2))
                        .sum();
                    if d2 < (radius * n as f64).powi(2) {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(g.n_interior(), count);
    }

    #[test]
    fn sup_step_is_one_on_the_cube() {
        assert_eq!(cube(4, &small()).sup_step(), 1.0);
        assert_eq!(cube(4, &large()).sup_step(), 1.0);
        assert_eq!(cube(2, &small()).sup_step(), 1.0);
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        let v = small();
        assert!(matches!(
            Grid::<f64>::build(Domain::UnitCube, 1, &v),
            Err(GridError::ResolutionTooSmall(1))
        ));
        // A small off-lattice ball holds no lattice points at n = 2.
        let tiny = Domain::Ball {
            center: [0.25, 0.25, 0.25],
            radius: 0.2,
        };
        assert!(matches!(
            Grid::<f64>::build(tiny, 2, &v),
            Err(GridError::EmptyInterior { .. })
        ));
        assert!(matches!(
            Grid::<f64>::build(
                Domain::Ball {
                    center: [0.5, 0.5, 0.5],
                    radius: -1.0,
                },
                4,
                &v
            ),
            Err(GridError::BadRadius(_))
        ));
    }

    #[test]
    fn second_difference_is_exact_on_quadratics() {
        // For u(x) = ½⟨x, Mx⟩ sampled at physical coordinates, the second
        // difference along e equals ⟨e, Me⟩ for every interior point and
        // direction, including boundary-adjacent points with fractional or
        // irrational steps.
        let m = SymMatrix::<f64>::from_upper([2.0, 0.3, -0.4, 1.5, 0.2, 3.0]);
        let quad = |p: Vec3<f64>| 0.5 * crate::geom::dot(p, m.mul_vec(p));
        let grids = [
            cube(4, &large()),
            Grid::build(
                Domain::Ball {
                    center: [0.5, 0.5, 0.5],
                    radius: 0.5,
                },
                6,
                &large(),
            )
            .unwrap(),
        ];
        for g in &grids {
            let u = Field::from_fn(g, quad);
            for x in 0..g.n_interior() as u32 {
                for (di, dir) in g.stencil().dirs().iter().enumerate() {
                    let want = m.quad(dir.as_real::<f64>());
                    let got = g.second_difference(&u, x, di);
                    assert!(
                        (got - want).abs() <= 1e-9 * (1.0 + want.abs()),
                        "Δ along {dir} at {:?}: got {got}, want {want}",
                        g.interior_points()[x as usize]
                    );
                }
            }
        }
    }

    #[test]
    fn second_difference_annihilates_affine_fields() {
        let g = cube(4, &large());
        let u = Field::from_fn(&g, |p| 3.0 - 2.0 * p[0] + 0.7 * p[1] + 0.1 * p[2]);
        for x in 0..g.n_interior() as u32 {
            for di in 0..g.stencil().len() {
                assert!(g.second_difference(&u, x, di).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn second_difference_of_point_bump_is_minus_two_n_squared() {
        // u = 1 at a deep interior point, 0 elsewhere: with unit steps both
        // sides, the second difference there is exactly -2n².
        let g = cube(6, &small());
        let x = g.find_interior([3, 3, 3]).unwrap();
        let mut u = Field::zeros(&g);
        u[x as usize] = 1.0;
        for di in 0..g.stencil().len() {
            assert_eq!(g.second_difference(&u, x, di), -72.0);
        }
    }

    #[test]
    fn field_from_fn_uses_physical_coordinates() {
        let g = cube(4, &small());
        let u = Field::from_fn(&g, |p| p[0]);
        let x = g.find_interior([2, 1, 1]).unwrap();
        assert_eq!(u[x as usize], 0.5);
        // Boundary nodes are evaluated too.
        let s = g.step(g.find_interior([1, 1, 1]).unwrap(), 0);
        let b = s.neg.neighbor;
        assert!(b as usize >= g.n_interior());
        assert_eq!(u[b as usize], g.physical_position(b)[0]);
    }

    #[test]
    fn field_csv_round_trips() {
        let g = cube(3, &small());
        let u = Field::from_fn(&g, |p| p[0] * p[1] - 2.0 * p[2] + 0.125);
        let mut buf = Vec::new();
        u.to_csv(&g, &mut buf).unwrap();
        let back = Field::from_csv(&g, buf.as_slice()).unwrap();
        // f64 values print in shortest round-trip form, so equality is exact.
        assert_eq!(u, back);

        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,x,y,z,value"));
        assert_eq!(text.lines().count(), 1 + g.n_nodes());
    }

    #[test]
    fn field_csv_rejects_malformed_input() {
        let g = cube(3, &small());
        let missing = "index,x,y,z,value\n0,0,0,0,1.0\n";
        assert!(matches!(
            Field::<f64>::from_csv(&g, missing.as_bytes()),
            Err(GridError::BadRecord(..))
        ));
        let dup = "index,x,y,z,value\n0,0,0,0,1.0\n0,0,0,0,2.0\n";
        assert!(matches!(
            Field::<f64>::from_csv(&g, dup.as_bytes()),
            Err(GridError::BadRecord(..))
        ));
        let n = g.n_nodes();
        let oob = format!("index,x,y,z,value\n{n},0,0,0,1.0\n");
        assert!(matches!(
            Field::<f64>::from_csv(&g, oob.as_bytes()),
            Err(GridError::BadRecord(..))
        ));
    }

    #[test]
    fn grid_csv_lists_every_node() {
        let g = cube(3, &small());
        let mut buf = Vec::new();
        g.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + g.n_nodes());
        assert_eq!(
            text.lines().filter(|l| l.ends_with("interior")).count(),
            g.n_interior()
        );
    }
}
