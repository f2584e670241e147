//! Lattice geometry of Z^d under anisotropic quadratic metrics.
//!
//! Provides the integer direction vectors and stencils the schemes are built
//! from, enumeration of orthogonal triplets for the wide-stencil comparison
//! scheme, and — the geometric core — strict Voronoi vectors of Z³ under the
//! metric `‖v‖²_M = ⟨v, Mv⟩`: the directions whose cell facets have positive
//! area. A stencil resolves a matrix exactly when it contains all of them,
//! which is the computable consistency predicate everything else relies on.
//!
//! Strictness is decided two independent ways: geometrically (positive facet
//! area of the cell built by the polytope module) and by a coset criterion
//! (`e` is strict iff `±e` are the unique minimizers of the M-norm over
//! `e + 2Z³`), with near-ties escalated to exact rational arithmetic. The
//! second route exists so tests never have to trust the first.

use crate::matrix::{MatrixError, SymMatrix};
use crate::polytope::{symmetric_cell, PolytopeError, SymmetricCell};
use crate::scalar::Real;
use num_integer::Integer;
use num_rational::BigRational;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Facet areas above this absolute threshold count as positive; strictness is
/// a measure-zero boundary, so generic inputs sit far from it.
pub const STRICT_AREA_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("the zero vector is not a valid lattice direction")]
    ZeroVector,
    #[error("coordinates ({0}) are not co-prime")]
    NotCoprime(String),
    #[error("directions do not span the space")]
    NotSpanning,
    #[error("kappa must be >= 1, got {0}")]
    KappaTooSmall(f64),
    #[error("orthogonal-triplet box radius must be 1, 2, or 3, got {0}")]
    InvalidBoxRadius(u32),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("stencil text is malformed: {0}")]
    Parse(String),
    #[error("cell geometry failed: {0}")]
    Geometry(#[from] PolytopeError),
}

impl From<MatrixError> for LatticeError {
    fn from(e: MatrixError) -> Self {
        LatticeError::NotPositiveDefinite(e.to_string())
    }
}

/// A nonzero integer direction with co-prime coordinates, identified with its
/// negation: construction canonicalizes to the representative whose first
/// nonzero coordinate is positive (the lexicographically larger of `{e, −e}`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeVector<const D: usize = 3> {
    coords: [i64; D],
}

impl<const D: usize> LatticeVector<D> {
    /// # Errors
    /// Rejects the zero vector and vectors whose coordinates share a factor.
    pub fn new(coords: [i64; D]) -> Result<Self, LatticeError> {
        if coords.iter().all(|&c| c == 0) {
            return Err(LatticeError::ZeroVector);
        }
        let g = coords.iter().fold(0i64, |g, &c| g.gcd(&c));
        if g != 1 {
            return Err(LatticeError::NotCoprime(
                coords.map(|c| c.to_string()).join(" "),
            ));
        }
        Ok(Self::canonical(coords))
    }

    fn canonical(mut coords: [i64; D]) -> Self {
        if let Some(first) = coords.iter().find(|&&c| c != 0) {
            if *first < 0 {
                for c in &mut coords {
                    *c = -*c;
                }
            }
        }
        Self { coords }
    }

    pub fn coords(&self) -> [i64; D] {
        self.coords
    }

    pub fn norm_sq(&self) -> i64 {
        self.coords.iter().map(|&c| c * c).sum()
    }

    pub fn dot(&self, other: &Self) -> i64 {
        self.coords
            .iter()
            .zip(other.coords.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn as_real<R: Real>(&self) -> [R; D] {
        self.coords.map(|c| R::of(c as f64))
    }
}

impl<const D: usize> fmt::Display for LatticeVector<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in &self.coords {
            if !first {
                write!(f, " ")?;
            }
            write!(f, "{c}")?;
            first = false;
        }
        Ok(())
    }
}

impl<const D: usize> FromStr for LatticeVector<D> {
    type Err = LatticeError;

    fn from_str(s: &str) -> Result<Self, LatticeError> {
        let parts: Vec<i64> = s
            .split_whitespace()
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|_| LatticeError::Parse(format!("bad integer {t:?}")))
            })
            .collect::<Result<_, _>>()?;
        let coords: [i64; D] = parts.try_into().map_err(|v: Vec<i64>| {
            LatticeError::Parse(format!("expected {D} coordinates, got {}", v.len()))
        })?;
        Self::new(coords)
    }
}

/// A finite set of sign-identified directions spanning R^d, with a label that
/// travels into run records and serialized files. Directions are kept sorted,
/// so equal stencils are structurally equal and every index-aligned consumer
/// (offsets, facet areas, grid steps) sees a stable order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stencil<const D: usize = 3> {
    dirs: Vec<LatticeVector<D>>,
    label: String,
}

impl<const D: usize> Stencil<D> {
    /// Sorts, silently drops duplicates (the set is stored up to sign), and
    /// verifies that the directions span R^d.
    ///
    /// # Errors
    /// `NotSpanning` when the integer span has rank < d.
    pub fn new(
        dirs: Vec<LatticeVector<D>>,
        label: impl Into<String>,
    ) -> Result<Self, LatticeError> {
        let mut dirs = dirs;
        dirs.sort();
        dirs.dedup();
        let rows: Vec<[i64; D]> = dirs.iter().map(|e| e.coords()).collect();
        if integer_rank(&rows) < D {
            return Err(LatticeError::NotSpanning);
        }
        Ok(Self {
            dirs,
            label: label.into(),
        })
    }

    pub fn dirs(&self) -> &[LatticeVector<D>] {
        &self.dirs
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn contains(&self, e: &LatticeVector<D>) -> bool {
        self.dirs.binary_search(e).is_ok()
    }

    pub fn dir_index(&self, e: &LatticeVector<D>) -> Option<usize> {
        self.dirs.binary_search(e).ok()
    }

    /// Line-based text form: a `stencil <label>` header, then one vector per
    /// line as space-separated integers.
    pub fn to_text(&self) -> String {
        let mut s = format!("stencil {}\n", self.label);
        for e in &self.dirs {
            s.push_str(&format!("{e}\n"));
        }
        s
    }

    /// Parse the `to_text` format. Blank lines and `#` comments are skipped;
    /// a bare first line (without the `stencil ` prefix) is accepted as the label.
    ///
    /// # Errors
    /// Malformed vector lines, invalid vectors, or a non-spanning set.
    pub fn from_text(text: &str) -> Result<Self, LatticeError> {
        let mut label: Option<String> = None;
        let mut dirs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match &mut label {
                None => {
                    label = Some(
                        line.strip_prefix("stencil ")
                            .unwrap_or(line)
                            .trim()
                            .to_string(),
                    );
                }
                Some(_) => dirs.push(line.parse::<LatticeVector<D>>()?),
            }
        }
        let label = label.ok_or_else(|| LatticeError::Parse("empty input".into()))?;
        if dirs.is_empty() {
            return Err(LatticeError::Parse("no directions listed".into()));
        }
        Self::new(dirs, label)
    }
}

/// Rank of an integer matrix by fraction-free Gaussian elimination (exact; the
/// entries these stencils produce keep intermediate products far below i128).
fn integer_rank<const D: usize>(rows: &[[i64; D]]) -> usize {
    let mut mat: Vec<[i128; D]> = rows.iter().map(|r| r.map(|c| c as i128)).collect();
    let mut rank = 0;
    for col in 0..D {
        let Some(pivot) = (rank..mat.len()).find(|&r| mat[r][col] != 0) else {
            continue;
        };
        mat.swap(rank, pivot);
        let p = mat[rank][col];
        for r in (rank + 1)..mat.len() {
            let q = mat[r][col];
            if q != 0 {
                for c in 0..D {
                    mat[r][c] = mat[r][c] * p - mat[rank][c] * q;
                }
            }
        }
        rank += 1;
        if rank == mat.len() {
            break;
        }
    }
    rank
}

/// The two book stencils: closures of a few generators under coordinate
/// permutations and sign changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table1Stencil {
    /// Generators (1,0,0), (1,1,0), (1,1,1) — 13 directions up to sign.
    Small,
    /// Small plus (2,1,0), (2,1,1) — 37 directions up to sign.
    Large,
}

/// Closure of generator vectors under coordinate permutation and sign change,
/// as a sign-identified stencil.
fn symmetrized_stencil(generators: &[[i64; 3]], label: &str) -> Stencil<3> {
    let mut set: BTreeSet<LatticeVector<3>> = BTreeSet::new();
    for &g in generators {
        let perms = [
            [g[0], g[1], g[2]],
            [g[0], g[2], g[1]],
            [g[1], g[0], g[2]],
            [g[1], g[2], g[0]],
            [g[2], g[0], g[1]],
            [g[2], g[1], g[0]],
        ];
        for p in perms {
            for s in 0..8u8 {
                let v = [
                    if s & 1 == 0 { p[0] } else { -p[0] },
                    if s & 2 == 0 { p[1] } else { -p[1] },
                    if s & 4 == 0 { p[2] } else { -p[2] },
                ];
                set.insert(LatticeVector::new(v).expect("generators are nonzero and co-prime"));
            }
        }
    }
    Stencil::new(set.into_iter().collect(), label).expect("generator closures span R^3")
}

pub fn make_table1_stencil(which: Table1Stencil) -> Stencil<3> {
    match which {
        Table1Stencil::Small => symmetrized_stencil(&[[1, 0, 0], [1, 1, 0], [1, 1, 1]], "small"),
        Table1Stencil::Large => symmetrized_stencil(
            &[[1, 0, 0], [1, 1, 0], [1, 1, 1], [2, 1, 0], [2, 1, 1]],
            "large",
        ),
    }
}

/// The 9 directions (up to sign) consumed by the determinant-of-second-
/// differences comparison scheme: the axes and the two-axis diagonals.
pub fn fd_stencil() -> Stencil<3> {
    symmetrized_stencil(&[[1, 0, 0], [1, 1, 0]], "fd")
}

/// All co-prime integer directions with `‖e‖ ≤ kappa·√d`, up to sign. Resolves
/// every SPD matrix whose condition measure is at most `kappa`.
///
/// # Errors
/// `KappaTooSmall` for `kappa < 1` (no stencil below the unit ball works).
pub fn make_kappa_stencil<R: Real, const D: usize>(kappa: R) -> Result<Stencil<D>, LatticeError> {
    let kf = kappa.f64();
    if !(kf >= 1.0) {
        return Err(LatticeError::KappaTooSmall(kf));
    }
    // Tiny relative slack so a radius that is exactly an integer in real
    // arithmetic is not lost to rounding of kappa^2 * d.
    let limit = kf * kf * D as f64 * (1.0 + 1e-12);
    let c = limit.sqrt().floor() as i64;
    let mut set: BTreeSet<LatticeVector<D>> = BTreeSet::new();
    for coords in BoxIter::<D>::new(c) {
        if coords.iter().all(|&x| x == 0) {
            continue;
        }
        let norm_sq: i64 = coords.iter().map(|&x| x * x).sum();
        if (norm_sq as f64) > limit {
            continue;
        }
        if coords.iter().fold(0i64, |g, &x| g.gcd(&x)) != 1 {
            continue;
        }
        set.insert(LatticeVector::canonical(coords));
    }
    Stencil::new(set.into_iter().collect(), format!("kappa:{}", kf))
}

/// Odometer over the integer box `[-c, c]^D`.
struct BoxIter<const D: usize> {
    cur: [i64; D],
    c: i64,
    done: bool,
}

impl<const D: usize> BoxIter<D> {
    fn new(c: i64) -> Self {
        Self {
            cur: [-c; D],
            c,
            done: c < 0,
        }
    }
}

impl<const D: usize> Iterator for BoxIter<D> {
    type Item = [i64; D];

    fn next(&mut self) -> Option<[i64; D]> {
        if self.done {
            return None;
        }
        let out = self.cur;
        let mut k = 0;
        loop {
            self.cur[k] += 1;
            if self.cur[k] <= self.c {
                break;
            }
            self.cur[k] = -self.c;
            k += 1;
            if k == D {
                self.done = true;
                break;
            }
        }
        Some(out)
    }
}

/// Pairwise-orthogonal triplets of co-prime directions inside an integer box,
/// deduplicated up to reordering and per-vector sign — the bases the
/// wide-stencil comparison scheme minimizes over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrthogonalTripletSet {
    triplets: Vec<[LatticeVector<3>; 3]>,
    label: String,
    box_radius: u32,
}

impl OrthogonalTripletSet {
    pub fn triplets(&self) -> &[[LatticeVector<3>; 3]] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn box_radius(&self) -> u32 {
        self.box_radius
    }

    /// Union of all member directions as a stencil (for grid construction).
    pub fn directions(&self) -> Stencil<3> {
        let set: BTreeSet<LatticeVector<3>> = self.triplets.iter().flatten().copied().collect();
        Stencil::new(set.into_iter().collect(), self.label.clone())
            .expect("triplet unions contain the coordinate axes")
    }
}

/// Enumerate the orthogonal triplets in the box `{-r..r}³`: every unordered
/// triple of pairwise-orthogonal, sign-identified, co-prime directions.
/// Box radii 1, 2, 3 are labeled small, medium, large.
///
/// # Errors
/// `InvalidBoxRadius` outside 1..=3.
pub fn make_ws_triplets(box_radius: u32) -> Result<OrthogonalTripletSet, LatticeError> {
    let label = match box_radius {
        1 => "small",
        2 => "medium",
        3 => "large",
        _ => return Err(LatticeError::InvalidBoxRadius(box_radius)),
    };
    let r = box_radius as i64;
    let mut vecs: Vec<LatticeVector<3>> = Vec::new();
    let mut seen: BTreeSet<LatticeVector<3>> = BTreeSet::new();
    for coords in BoxIter::<3>::new(r) {
        if coords.iter().all(|&x| x == 0) {
            continue;
        }
        if coords.iter().fold(0i64, |g, &x| g.gcd(&x)) != 1 {
            continue;
        }
        let v = LatticeVector::canonical(coords);
        if seen.insert(v) {
            vecs.push(v);
        }
    }
    vecs.sort();
    let mut triplets = Vec::new();
    for i in 0..vecs.len() {
        for j in (i + 1)..vecs.len() {
            if vecs[i].dot(&vecs[j]) != 0 {
                continue;
            }
            for k in (j + 1)..vecs.len() {
                if vecs[i].dot(&vecs[k]) == 0 && vecs[j].dot(&vecs[k]) == 0 {
                    triplets.push([vecs[i], vecs[j], vecs[k]]);
                }
            }
        }
    }
    Ok(OrthogonalTripletSet {
        triplets,
        label: label.to_string(),
        box_radius,
    })
}

/// The Voronoi cell of Z³ at the origin under `‖·‖_M`, together with the
/// candidate directions it was cut from and the strict subset among them.
#[derive(Debug, Clone)]
pub struct VoronoiCell<R: Real> {
    pub cell: SymmetricCell<R>,
    /// All sign-identified co-prime candidates within the enumeration bound,
    /// sorted; `cell.facet_area` is indexed by this list.
    pub candidates: Vec<LatticeVector<3>>,
    /// Candidates whose facet area exceeds [`STRICT_AREA_TOL`], sorted.
    pub strict: Vec<LatticeVector<3>>,
}

/// Candidates for M-Voronoi vectors: co-prime, sign-identified, with
/// `‖e‖ ≤ κ(M)√3` (plus a float-slack coordinate box one unit wider).
fn voronoi_candidates<R: Real>(m: &SymMatrix<R>) -> Result<Vec<LatticeVector<3>>, LatticeError> {
    let kappa = m.kappa()?.f64();
    let bound = kappa * 3f64.sqrt();
    let c = bound.ceil() as i64 + 1;
    let norm_limit = bound * bound * (1.0 + 1e-9);
    let mut set: BTreeSet<LatticeVector<3>> = BTreeSet::new();
    for coords in BoxIter::<3>::new(c) {
        if coords.iter().all(|&x| x == 0) {
            continue;
        }
        let norm_sq: i64 = coords.iter().map(|&x| x * x).sum();
        if (norm_sq as f64) > norm_limit {
            continue;
        }
        if coords.iter().fold(0i64, |g, &x| g.gcd(&x)) != 1 {
            continue;
        }
        set.insert(LatticeVector::canonical(coords));
    }
    Ok(set.into_iter().collect())
}

/// Build the M-Voronoi cell geometrically: one halfspace `2⟨g, Me⟩ ≤ ⟨e,Me⟩`
/// per candidate direction. Its volume is exactly 1 (the cell tiles space
/// under Z³ translations), which callers use as a built-in sanity check.
///
/// # Errors
/// Non-positive-definite `M`; geometry failures from the cell construction.
pub fn voronoi_cell<R: Real>(m: &SymMatrix<R>) -> Result<VoronoiCell<R>, LatticeError> {
    let candidates = voronoi_candidates(m)?;
    let normals: Vec<[R; 3]> = candidates.iter().map(|e| m.mul_vec(e.as_real())).collect();
    let offsets: Vec<R> = candidates
        .iter()
        .zip(&normals)
        .map(|(e, n)| crate::geom::dot(e.as_real(), *n))
        .collect();
    let cell = symmetric_cell(&normals, &offsets)?;
    let tol = R::of(STRICT_AREA_TOL);
    let strict = candidates
        .iter()
        .zip(&cell.facet_area)
        .filter(|(_, a)| **a > tol)
        .map(|(e, _)| *e)
        .collect();
    Ok(VoronoiCell {
        cell,
        candidates,
        strict,
    })
}

/// Strict M-Voronoi vectors (up to sign), decided geometrically by positive
/// facet area of the Voronoi cell. The coset-based
/// [`strict_voronoi_vectors_coset`] is the independent cross-check.
///
/// # Errors
/// Non-positive-definite `M` rejected.
pub fn strict_voronoi_vectors<R: Real>(
    m: &SymMatrix<R>,
) -> Result<Vec<LatticeVector<3>>, LatticeError> {
    Ok(voronoi_cell(m)?.strict)
}

/// Coset criterion for strictness: `e` is a strict M-Voronoi vector iff `±e`
/// are the *unique* minimizers of `‖v‖_M` over the coset `e + 2Z³`.
///
/// Enumeration is pruned through the Cholesky factor of `M`; candidates within
/// a 1e-9 relative band of the minimum are re-compared exactly in rational
/// arithmetic (binary floats convert exactly), so the uniqueness decision
/// carries no floating-point ambiguity.
///
/// # Errors
/// Non-positive-definite `M` rejected.
pub fn coset_strict<R: Real>(m: &SymMatrix<R>, e: &LatticeVector<3>) -> Result<bool, LatticeError> {
    let u = m
        .cholesky()
        .ok_or_else(|| LatticeError::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    let [u00, u01, u02, u11, u12, u22] = u.map(|x| x.f64());
    let ec = e.coords();
    let band = 1.0 + 1e-9;

    let q0 = m.quad(e.as_real()).f64();
    let mut best = q0;
    let mut hits: Vec<([i64; 3], f64)> = Vec::new();

    // Smallest member of the arithmetic progression {parity + 2Z} that is >= lo.
    let coset_start = |lo: f64, parity: i64| -> i64 {
        let mut s = lo.ceil() as i64;
        if (s - parity).rem_euclid(2) != 0 {
            s += 1;
        }
        s
    };

    // Ranges are cut from the *initial* minimum q0 (they only need to contain
    // every point that could beat it); pruning inside uses the shrinking best.
    let b3 = (band * q0).sqrt() / u22;
    let mut v3 = coset_start(-b3, ec[2]);
    while (v3 as f64) <= b3 {
        let t3 = u22 * v3 as f64;
        let p3 = t3 * t3;
        if p3 <= band * best {
            let rem2 = band * best - p3;
            let c2 = -(u12 * v3 as f64) / u11;
            let h2 = rem2.sqrt() / u11;
            let mut v2 = coset_start(c2 - h2, ec[1]);
            while (v2 as f64) <= c2 + h2 {
                let t2 = u11 * v2 as f64 + u12 * v3 as f64;
                let p2 = p3 + t2 * t2;
                if p2 <= band * best {
                    let rem1 = band * best - p2;
                    let c1 = -(u01 * v2 as f64 + u02 * v3 as f64) / u00;
                    let h1 = rem1.sqrt() / u00;
                    let mut v1 = coset_start(c1 - h1, ec[0]);
                    while (v1 as f64) <= c1 + h1 {
                        let t1 = u00 * v1 as f64 + u01 * v2 as f64 + u02 * v3 as f64;
                        let q = p2 + t1 * t1;
                        if q <= band * best {
                            hits.push(([v1, v2, v3], q));
                            if q < best {
                                best = q;
                            }
                        }
                        v1 += 2;
                    }
                }
                v2 += 2;
            }
        }
        v3 += 2;
    }

    // Keep only the near-tie band around the final minimum, then settle the
    // uniqueness question exactly.
    hits.retain(|(_, q)| *q <= band * best);
    let entries: [f64; 6] = m.upper().map(|x| x.f64());
    let exact_quad = |v: [i64; 3]| -> BigRational {
        let rat = |x: f64| BigRational::from_float(x).expect("finite float");
        let prod = |a: i64, b: i64| rat((a * b) as f64);
        rat(entries[0]) * prod(v[0], v[0])
            + rat(entries[3]) * prod(v[1], v[1])
            + rat(entries[5]) * prod(v[2], v[2])
            + rat(2.0)
                * (rat(entries[1]) * prod(v[0], v[1])
                    + rat(entries[2]) * prod(v[0], v[2])
                    + rat(entries[4]) * prod(v[1], v[2]))
    };
    let exact: Vec<([i64; 3], BigRational)> =
        hits.iter().map(|(v, _)| (*v, exact_quad(*v))).collect();
    let min = exact
        .iter()
        .map(|(_, q)| q)
        .min()
        .expect("the coset contains e itself")
        .clone();
    let winners: Vec<[i64; 3]> = exact
        .into_iter()
        .filter(|(_, q)| *q == min)
        .map(|(v, _)| v)
        .collect();
    let neg = ec.map(|c| -c);
    Ok(winners.len() == 2 && winners.contains(&ec) && winners.contains(&neg))
}

/// Strict M-Voronoi vectors by the coset criterion — the independent oracle
/// route, sharing only the candidate enumeration with the geometric one.
///
/// # Errors
/// Non-positive-definite `M` rejected.
pub fn strict_voronoi_vectors_coset<R: Real>(
    m: &SymMatrix<R>,
) -> Result<Vec<LatticeVector<3>>, LatticeError> {
    let mut out = Vec::new();
    for e in voronoi_candidates(m)? {
        if coset_strict(m, &e)? {
            out.push(e);
        }
    }
    Ok(out)
}

/// Whether the stencil resolves `M` exactly: true iff every strict M-Voronoi
/// vector lies in `V` (up to sign).
///
/// # Errors
/// Non-positive-definite `M` rejected.
pub fn is_consistent<R: Real>(m: &SymMatrix<R>, v: &Stencil<3>) -> Result<bool, LatticeError> {
    Ok(strict_voronoi_vectors(m)?.iter().all(|e| v.contains(e)))
}
