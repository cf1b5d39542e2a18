//! Galerkin discretization and verification tools for degenerate elliptic
//! operators `-div(P grad u) + HRu + S'(Gu) + Fu` with rough coefficients.

pub mod analysis;
pub mod assembly;
pub mod checks;
pub mod error;
pub mod expr;
pub mod fields;
pub mod linalg;
pub mod mesh;
pub mod problem;
pub mod solver;
pub mod space;
pub mod spectral;

pub use error::{Error, Result};
