//! Discretized energies `E(U)` and their gradients behind one interface.
//!
//! Three concrete models share a single 1-D finite-difference engine
//! ([`Ks1dModel`]): a quadratic (linear eigenvalue) model, a nonlinear
//! Hartree model, and a Kohn-Sham model with LDA exchange-correlation.
//! All satisfy the contract that `gradient` is the exact derivative of
//! `energy` in the weighted inner product and that `⟨∇E(U)^T U⟩` is
//! symmetric for every frame `U`, on or off the manifold.

use std::sync::Arc;

use thiserror::Error;

use crate::manifold::{ManifoldError, Orbitals, Quadrature};

pub mod lda;
mod ks1d;

pub use ks1d::{
    external_potential, hartree_potential_1d, EnergyTerms, KohnSham1DSpec, Ks1dModel, Nucleus,
};

/// Occupation number per orbital; the models are spin-restricted with every
/// orbital doubly occupied, which is where the factor 4 in the gradient
/// comes from.
pub const OCCUPATION: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("orbitals shaped {got_grid}x{got_orbitals} do not match model dimension {n_grid}x{n_orbitals}")]
    DimensionMismatch {
        n_grid: usize,
        n_orbitals: usize,
        got_grid: usize,
        got_orbitals: usize,
    },
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("model produced a non-finite {quantity}")]
    NonFinite { quantity: &'static str },
}

/// A concrete discretized energy with its exact gradient.
pub trait EnergyModel: Send + Sync {
    fn energy(&self, u: &Orbitals) -> Result<f64, ModelError>;
    fn gradient(&self, u: &Orbitals) -> Result<Orbitals, ModelError>;
    fn quadrature(&self) -> &Arc<Quadrature>;
    /// `(N_g, N)`: grid size and orbital count the model is configured for.
    fn dimension(&self) -> (usize, usize);
}

/// Uniform 1-D grid with zero-Dirichlet boundary.
///
/// Interior nodes sit at `origin + (g + 1) h` for `g = 0..N_g`; the ghost
/// nodes at `origin` and `origin + (N_g + 1) h` carry the boundary zeros, so
/// the domain length is `(N_g + 1) h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    n_points: usize,
    spacing: f64,
    origin: f64,
}

impl Grid1D {
    pub fn new(n_points: usize, spacing: f64, origin: f64) -> Result<Self, ModelError> {
        if n_points < 8 {
            return Err(ModelError::InvalidSpec(format!(
                "grid needs at least 8 points, got {n_points}"
            )));
        }
        if !spacing.is_finite() || spacing <= 0.0 {
            return Err(ModelError::InvalidSpec(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        if !origin.is_finite() {
            return Err(ModelError::InvalidSpec("grid origin must be finite".into()));
        }
        Ok(Self {
            n_points,
            spacing,
            origin,
        })
    }

    /// Grid centered on zero: origin chosen as `-(N_g + 1) h / 2`.
    pub fn centered(n_points: usize, spacing: f64) -> Result<Self, ModelError> {
        let origin = -0.5 * (n_points as f64 + 1.0) * spacing;
        Self::new(n_points, spacing, origin)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn length(&self) -> f64 {
        (self.n_points as f64 + 1.0) * self.spacing
    }

    pub fn point(&self, g: usize) -> f64 {
        self.origin + (g as f64 + 1.0) * self.spacing
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|g| self.point(g))
    }

    pub fn quadrature(&self) -> Arc<Quadrature> {
        Quadrature::uniform(self.n_points, self.spacing).expect("positive spacing")
    }
}

/// Pointwise electron density `ρ_U(x_g) = 2 Σ_i u_i(x_g)^2`.
#[derive(Debug, Clone)]
pub struct DensityField {
    values: Vec<f64>,
}

impl DensityField {
    pub fn from_orbitals(u: &Orbitals) -> Self {
        let mut values = vec![0.0; u.n_grid()];
        for j in 0..u.n_orbitals() {
            let col = u.coefficients().column(j);
            for g in 0..u.n_grid() {
                values[g] += OCCUPATION * col[g] * col[g];
            }
        }
        Self { values }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
