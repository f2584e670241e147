//! Monotone discretization of the three-dimensional Monge-Ampère operator.
//!
//! The centerpiece is a degenerate-elliptic finite-difference operator whose
//! value at a grid point is the volume of a small origin-symmetric polytope
//! cut from second differences of the unknown along a lattice stencil. The
//! crate provides:
//!
//! - [`lattice`]: integer stencils, Voronoi geometry of Z³ under anisotropic
//!   metrics, and the consistency predicate that tells when a stencil resolves
//!   a given Hessian exactly;
//! - [`polytope`]: volumes and facet areas of symmetric halfspace
//!   intersections (the operator's value and its Jacobian weights);
//! - [`grid`]: cube and ball domains discretized with boundary-aware steps and
//!   second differences;
//! - [`operators`]: the polytope-volume operator plus two classical
//!   comparison schemes (a determinant-of-second-differences scheme and a
//!   wide-stencil minimum over orthogonal bases), assembled into sparse
//!   Newton systems;
//! - [`newton`]: a damped Newton solver with a line search that keeps
//!   iterates inside the discrete convexity region;
//! - [`bench`]: closed-form test problems, consistency sphere maps, and
//!   convergence tables behind the `ma3d` CLI.
//!
//! Everything numeric is generic over the scalar type through
//! [`scalar::Real`] (instantiated in practice at `f64`, with `f32` kept
//! compiling as a genericity check); concrete `f64` aliases are exported at
//! the crate root.

pub mod bench;
pub mod geom;
pub mod grid;
pub mod lattice;
pub mod matrix;
pub mod newton;
pub mod operators;
pub mod polytope;
pub mod scalar;
pub mod sparse;

pub use bench::{
    consistency_sphere_map, convergence_table, fibonacci_sphere, init_threads, linf_error,
    random_spd, scheme_from_spec, write_sphere_csv, write_table_csv, BenchError, RunRecord,
    SphereFamily, SphereSample, TestCase,
};
pub use grid::GridError;
pub use lattice::{
    fd_stencil, is_consistent, make_kappa_stencil, make_table1_stencil, make_ws_triplets,
    strict_voronoi_vectors, strict_voronoi_vectors_coset, voronoi_cell, LatticeError,
    OrthogonalTripletSet, Table1Stencil,
};
pub use newton::{default_seed, sanity_bounds, solve, NewtonConfig, NewtonError, SolveReport};
pub use operators::{
    apply_dv, apply_dv_asymmetric, apply_fd, apply_ws, OperatorConfig, OperatorError, Scheme,
};
pub use polytope::{
    measure_d_of_matrix, measure_polytope, symmetric_cell, OffsetFamily, PolytopeError,
};
pub use scalar::Real;

/// Sign-identified integer direction in Z³ (`f64` workflows use this alias).
pub type LatticeVector = lattice::LatticeVector<3>;
/// Direction stencil in Z³.
pub type Stencil = lattice::Stencil<3>;
/// Symmetric 3×3 matrix over `f64`.
pub type SymMatrix = matrix::SymMatrix<f64>;
/// Cell measure over `f64`.
pub type PolytopeMeasure = polytope::PolytopeMeasure<f64>;
/// Discretized domain over `f64`.
pub type Grid = grid::Grid<f64>;
/// Node field over `f64`.
pub type Field = grid::Field<f64>;
/// Domain shape over `f64`.
pub type Domain = grid::Domain<f64>;
