//! Orthogonality-preserving gradient-flow solvers for energy minimization
//! under orthonormality constraints.
//!
//! The crate minimizes Kohn-Sham-type energies `E(U)` over frames `U` with
//! `⟨U^T U⟩ = I` by integrating the extended gradient flow
//! `dU/dt = -∇_G E(U)` with an implicit midpoint scheme. Every update is a
//! Cayley-type transform of a skew operator, so the iterates stay on the
//! Stiefel manifold to roundoff for any step size and any number of inner
//! iterations, with no retraction and no backtracking.
//!
//! Module layout:
//! - [`manifold`]: weighted Gram algebra, the low-rank skew bracket and its
//!   Cayley solves (dense oracle and Sherman-Morrison-Woodbury route).
//! - [`models`]: energy models behind one trait: a quadratic (linear
//!   eigenvalue) model, a nonlinear Hartree model and a 1-D Kohn-Sham model
//!   with LDA exchange-correlation.
//! - [`flow`]: the midpoint scheme, the fixed-inner-count orthogonality
//!   preserving iteration, the adaptive outer driver, trace records and
//!   empirical rate/Lipschitz probes.
//! - [`baselines`]: QR-retraction projected gradient descent and a dense
//!   eigensolver ground truth for the linear model.
//! - [`cli`]: config parsing and the `run`/`compare`/`sweep` commands behind
//!   the `flow` binary.

pub mod baselines;
pub mod cli;
pub mod flow;
pub mod manifold;
pub mod models;

pub use manifold::{GramMatrix, ManifoldError, Orbitals, Quadrature, SkewGenerator};
pub use models::{EnergyModel, Grid1D, Ks1dModel, ModelError};
