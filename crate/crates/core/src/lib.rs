//! Hybridizable discontinuous Galerkin (HDG) solvers on unstructured 2D meshes.
//!
//! The crate provides three discretizations built on a shared hybridization
//! engine (static condensation onto mesh faces, sparse global solve, local
//! recovery):
//!
//! - **Poisson / electrostatics** in mixed form with superconvergent
//!   postprocessing ([`poisson`]),
//! - **linear elasticity** with a pointwise-symmetric strain mixed variable
//!   stored in Voigt form ([`elasticity`]),
//! - **incompressible Stokes** in the lowest-order face-centered finite
//!   volume (FCFV) setting with closed-form cell solves ([`stokes`]).
//!
//! Curved boundaries are represented exactly by NURBS curves ([`nurbs`],
//! [`nefem`]) so that per-element polynomial-degree adaptivity
//! ([`adaptivity`]) never changes the geometry. Batch runs, mesh and config
//! file formats, VTK output and convergence drivers live in [`io`].

pub mod adaptivity;
pub mod assembly;
pub mod elasticity;
pub mod expr;
pub mod io;
pub mod manufactured;
pub mod mesh;
pub mod nefem;
pub mod nurbs;
pub mod physics;
pub mod poisson;
pub mod quadrature;
pub mod refelem;
pub mod stokes;

pub use mesh::{DegreeField, FaceRecord, Mesh2D};
