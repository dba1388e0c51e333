//! Positivity-preserving finite element solver for a haptotaxis model of
//! cancer invasion.
//!
//! Tumour cell density `u`, extracellular matrix `c` and protease `p` evolve
//! on a rectangle discretized by bilinear (Q1) elements. The chemotaxis
//! equation for `u` is advanced with a Galerkin, a low-order or a flux
//! corrected (FCT) scheme inside a damped fixed-point loop; `c` and `p` are
//! updated nodewise by exact integration of their ODEs.

pub mod assembly;
pub mod fct;
pub mod io;
pub mod kinetics;
pub mod linsolve;
pub mod mesh;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod quadrature;
pub mod sparse;
pub mod stepper;
