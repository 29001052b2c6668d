//! Numerics for lattice random walks killed outside the upper half-space
//! Z^{d-1} x N*: the dual convex geometry of the jump generating function,
//! minimal positive harmonic functions of the killed kernel, killed and
//! free Green's functions with their Martin-kernel ratio limits, and
//! sample-path large-deviation costs. Exact linear-algebra solvers carry
//! the results; seeded Monte Carlo oracles cross-check them.

pub mod deviations;
pub mod error;
pub mod geometry;
pub mod green;
pub mod harmonic;
pub mod ladder;
pub mod model;

pub use error::{Error, Result};
pub use geometry::{BoundaryClass, Direction, DualPoint};
pub use green::{BoxPolicy, ConvergenceRow, GreenField, GreenKind, TruncationBox};
pub use harmonic::HarmonicEvaluator;
pub use ladder::{BoundaryFunctionTable, DriftCase, McEstimate, OneDWalk};
pub use model::{JumpDistribution, LatticeVector, ValidationReport};
