//! Space-time hybridizable discontinuous Galerkin solver for linear
//! free-surface waves on prismatic space-time slabs.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: structured triangulations, periodic pairing and slab extrusion
//! - [`quadrature`] and [`basis`]: reference rules and orthonormal bases
//! - [`hdg_local`]: weighted element matrices and static condensation
//! - [`slab`]: global facet system, sparse solve and slab marching
//! - [`waves`]: harmonic-wave and wave-maker problem data
//! - [`projection`]: the HDG projection and weighted L2 projections
//! - [`report`]: error norms, convergence studies and CSV output

// `!(x > 0.0)` rejects NaN as well; index loops mirror the matrix notation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod error;
pub mod hdg_local;
pub mod mesh;
pub mod projection;
pub mod quadrature;
pub mod report;
pub mod slab;
pub mod waves;

pub use error::{
    BasisError, HdgError, MeshError, ProjectionError, QuadratureError, ReportError, SolveError,
};
