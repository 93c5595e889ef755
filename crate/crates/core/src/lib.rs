//! Numerical toolkit for nonlocal Hamilton-Jacobi-Bellman-Isaacs equations:
//! Levy kernels and quadrature, Pucci-type extremal operators, barrier
//! construction and verification, monotone solvers, convex-envelope and
//! contact-set geometry, and Harnack/Holder diagnostics.

// `!(x > 0.0)` guards reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod barriers;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod grid;
pub mod kernels;
pub mod operators;
pub mod problem;
pub mod quadrature;
pub mod regularity;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{BoxDomain, ExteriorRule, Grid, GridFunction, Region};
pub use kernels::{KernelFamily, LevyKernel};
pub use operators::EllipticityParams;
pub use problem::{Control, HJBIProblem, Multiplier, Omega};
pub use quadrature::QuadratureScheme;
pub use barriers::{BarrierConstants, BarrierKind, BarrierSpec, InequalityForm, VerificationReport};
pub use geometry::{AbpReport, ContactMask, ContactVariant, ParaboloidMask};
pub use regularity::{HarnackConfig, HarnackReport, HolderFit, HolderReport, OscillationSequence, SuperlevelReport};
pub use solver::{DiscreteOperator, Solution};
