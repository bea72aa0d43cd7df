//! Weighted linear algebra on discretized orbital frames.
//!
//! All inner products are taken with respect to a diagonal quadrature weight:
//! for grid functions `u`, `v` on `N_g` points, `(u, v) = Σ_g w_g u_g v_g`.
//! A frame `U` of `N` orbitals is a member of the Stiefel manifold `M^N` when
//! its Gram matrix `⟨U^T U⟩` equals the identity in that inner product.
//!
//! The module provides the Gram machinery, the low-rank skew bracket
//! `A_U = G U^T - U G^T` and its Cayley-type solves ([`cayley_solve_dense`],
//! [`cayley_solve_smw`]), orthonormalization, spectrum diagnostics and the
//! Grassmann distance between subspaces.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

mod cayley;

pub use cayley::{
    cayley_solve_dense, cayley_solve_smw, grassmann_gradient, skew_apply, SkewGenerator,
};

/// Soft size limit for operations that materialize an `N_g x N_g` operator.
pub const DENSE_OPERATOR_LIMIT: usize = 512;

/// Errors produced by manifold-level linear algebra.
#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("operands use different quadratures in {context}")]
    QuadratureMismatch { context: &'static str },
    #[error("non-finite entries in {context}")]
    NonFinite { context: &'static str },
    #[error("quadrature weights must be positive (weight {index} is {value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("frame must have 1 <= N <= N_g orbitals, got N_g = {n_grid}, N = {n_orbitals}")]
    BadFrameShape { n_grid: usize, n_orbitals: usize },
    #[error("column {column} is numerically rank deficient")]
    RankDeficient { column: usize },
    #[error("input is off the manifold: orthogonality error {error:.3e} exceeds {tolerance:.1e}")]
    OffManifold { error: f64, tolerance: f64 },
    #[error("dense solve limited to N_g <= {limit}, got N_g = {n_grid}")]
    DenseSizeLimit { n_grid: usize, limit: usize },
    #[error("numerical breakdown in low-rank Cayley solve at s = {s:.3e} (condition estimate {cond_estimate:.3e})")]
    NumericalBreakdown { s: f64, cond_estimate: f64 },
    #[error("dense linear solve failed in {context}")]
    SolveFailed { context: &'static str },
}

/// Diagonal quadrature defining the discrete `L^2` inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    weights: Vec<f64>,
}

impl Quadrature {
    /// Builds a quadrature from explicit positive weights.
    pub fn new(weights: Vec<f64>) -> Result<Self, ManifoldError> {
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(ManifoldError::NonPositiveWeight { index, value });
            }
        }
        Ok(Self { weights })
    }

    /// Uniform weights `h` on `n` points, the 1-D grid volume element.
    pub fn uniform(n: usize, h: f64) -> Result<Arc<Self>, ManifoldError> {
        Ok(Arc::new(Self::new(vec![h; n])?))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// A frame of `N` discretized orbitals: an `N_g x N` coefficient matrix
/// tied to the quadrature of its grid. Columns are orbitals.
#[derive(Debug, Clone)]
pub struct Orbitals {
    coeffs: DMatrix<f64>,
    quad: Arc<Quadrature>,
}

impl Orbitals {
    pub fn new(coeffs: DMatrix<f64>, quad: Arc<Quadrature>) -> Result<Self, ManifoldError> {
        if coeffs.nrows() != quad.len() {
            return Err(ManifoldError::ShapeMismatch {
                context: "Orbitals::new",
                expected: format!("{} grid rows", quad.len()),
                got: format!("{} rows", coeffs.nrows()),
            });
        }
        if coeffs.ncols() < 1 || coeffs.nrows() < coeffs.ncols() {
            return Err(ManifoldError::BadFrameShape {
                n_grid: coeffs.nrows(),
                n_orbitals: coeffs.ncols(),
            });
        }
        if coeffs.iter().any(|x| !x.is_finite()) {
            return Err(ManifoldError::NonFinite {
                context: "Orbitals::new",
            });
        }
        Ok(Self { coeffs, quad })
    }

    pub fn n_grid(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn n_orbitals(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn quadrature(&self) -> &Arc<Quadrature> {
        &self.quad
    }

    /// Replaces the coefficient matrix, keeping the quadrature.
    pub(crate) fn with_coeffs(&self, coeffs: DMatrix<f64>) -> Orbitals {
        Orbitals {
            coeffs,
            quad: Arc::clone(&self.quad),
        }
    }

    /// `a * self + b * other`, entrywise over matching frames.
    pub fn linear_comb(&self, a: f64, other: &Orbitals, b: f64) -> Result<Orbitals, ManifoldError> {
        same_space(self, other, "linear_comb")?;
        let coeffs = &self.coeffs * a + &other.coeffs * b;
        Ok(self.with_coeffs(coeffs))
    }

    pub fn scale(&self, a: f64) -> Orbitals {
        self.with_coeffs(&self.coeffs * a)
    }

    /// Right-multiplies by a small `N x M` matrix: the frame `U P`.
    pub fn mul_matrix(&self, p: &DMatrix<f64>) -> Result<Orbitals, ManifoldError> {
        if p.nrows() != self.n_orbitals() {
            return Err(ManifoldError::ShapeMismatch {
                context: "mul_matrix",
                expected: format!("{} rows", self.n_orbitals()),
                got: format!("{} rows", p.nrows()),
            });
        }
        Ok(self.with_coeffs(&self.coeffs * p))
    }

    /// Trace inner product `tr⟨self^T other⟩`.
    pub fn trace_inner(&self, other: &Orbitals) -> Result<f64, ManifoldError> {
        same_space(self, other, "trace_inner")?;
        let w = self.quad.weights();
        let mut acc = 0.0;
        for j in 0..self.n_orbitals() {
            let a = self.coeffs.column(j);
            let b = other.coeffs.column(j);
            for g in 0..self.n_grid() {
                acc += w[g] * a[g] * b[g];
            }
        }
        Ok(acc)
    }

    /// Trace norm `|||U||| = sqrt(tr⟨U^T U⟩)`, the weighted Frobenius norm.
    pub fn trace_norm(&self) -> f64 {
        let w = self.quad.weights();
        let mut acc = 0.0;
        for j in 0..self.n_orbitals() {
            let col = self.coeffs.column(j);
            for g in 0..self.n_grid() {
                acc += w[g] * col[g] * col[g];
            }
        }
        acc.sqrt()
    }

    /// Frobenius deviation of `⟨U^T U⟩` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        let g = gram_unchecked(self, self);
        let n = self.n_orbitals();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = g.entries()[(i, j)] - target;
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

fn same_space(a: &Orbitals, b: &Orbitals, context: &'static str) -> Result<(), ManifoldError> {
    if a.n_grid() != b.n_grid() || a.n_orbitals() != b.n_orbitals() {
        return Err(ManifoldError::ShapeMismatch {
            context,
            expected: format!("{}x{}", a.n_grid(), a.n_orbitals()),
            got: format!("{}x{}", b.n_grid(), b.n_orbitals()),
        });
    }
    compatible_quadrature(a, b, context)
}

fn compatible_quadrature(
    a: &Orbitals,
    b: &Orbitals,
    context: &'static str,
) -> Result<(), ManifoldError> {
    if Arc::ptr_eq(&a.quad, &b.quad) || a.quad.weights() == b.quad.weights() {
        Ok(())
    } else {
        Err(ManifoldError::QuadratureMismatch { context })
    }
}

/// Inner product matrix of two frames on the same grid.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// Maximum absolute asymmetry `max |G_ij - G_ji|`; zero for `gram(U, U)`
    /// up to roundoff.
    pub fn asymmetry(&self) -> f64 {
        let n = self.nrows().min(self.ncols());
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.entries[(i, j)] - self.entries[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Weighted inner product matrix `⟨U^T V⟩`, size `N_U x N_V`.
///
/// Entry `(i, j)` is `Σ_g w_g U[g][i] V[g][j]`.
pub fn gram(u: &Orbitals, v: &Orbitals) -> Result<GramMatrix, ManifoldError> {
    if u.n_grid() != v.n_grid() {
        return Err(ManifoldError::ShapeMismatch {
            context: "gram",
            expected: format!("{} grid rows", u.n_grid()),
            got: format!("{} grid rows", v.n_grid()),
        });
    }
    compatible_quadrature(u, v, "gram")?;
    Ok(gram_unchecked(u, v))
}

fn gram_unchecked(u: &Orbitals, v: &Orbitals) -> GramMatrix {
    // U^T (W V) with W the diagonal weight matrix; never forms an N_g x N_g
    // intermediate.
    let w = u.quad.weights();
    let mut weighted = v.coeffs.clone();
    for (g, mut row) in weighted.row_iter_mut().enumerate() {
        row *= w[g];
    }
    GramMatrix {
        entries: u.coeffs.tr_mul(&weighted),
    }
}

/// Extremal eigenvalues `(λ_min, λ_max)` of a (symmetrized) Gram matrix.
pub fn spectrum_bounds(gm: &GramMatrix) -> (f64, f64) {
    let sym = (&gm.entries + gm.entries.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &lambda in eig.eigenvalues.iter() {
        lo = lo.min(lambda);
        hi = hi.max(lambda);
    }
    (lo, hi)
}

/// Tolerance on `orthogonality_error` for operations that require inputs on
/// the manifold.
pub const MANIFOLD_TOLERANCE: f64 = 1e-8;

fn require_on_manifold(u: &Orbitals, tolerance: f64) -> Result<(), ManifoldError> {
    let error = u.orthogonality_error();
    if error > tolerance {
        return Err(ManifoldError::OffManifold { error, tolerance });
    }
    Ok(())
}

/// Grassmann distance `inf_{P orthogonal} |||U - V P|||` between the spans
/// of two orthonormal frames.
///
/// Uses the closed-form Procrustes minimizer `P* = A B^T` from the SVD
/// `⟨V^T U⟩ = A Σ B^T` and evaluates `|||U - V P*|||` on the aligned
/// difference directly; the trace identity
/// `tr⟨U^T U⟩ + tr⟨V^T V⟩ - 2 tr Σ` cancels catastrophically for nearby
/// subspaces and cannot resolve distances below ~1e-8.
pub fn subspace_distance(u: &Orbitals, v: &Orbitals) -> Result<f64, ManifoldError> {
    same_space(u, v, "subspace_distance")?;
    require_on_manifold(u, MANIFOLD_TOLERANCE)?;
    require_on_manifold(v, MANIFOLD_TOLERANCE)?;
    let alignment = procrustes_alignment(u, v)?;
    let aligned = v.mul_matrix(&alignment)?;
    u.linear_comb(1.0, &aligned, -1.0).map(|d| d.trace_norm())
}

/// Procrustes-optimal orthogonal alignment `P*` minimizing `|||U - V P|||`.
pub fn procrustes_alignment(u: &Orbitals, v: &Orbitals) -> Result<DMatrix<f64>, ManifoldError> {
    same_space(u, v, "procrustes_alignment")?;
    let m = gram_unchecked(v, u);
    let svd = m.entries.clone().svd(true, true);
    let a = svd.u.ok_or(ManifoldError::SolveFailed {
        context: "procrustes_alignment",
    })?;
    let bt = svd.v_t.ok_or(ManifoldError::SolveFailed {
        context: "procrustes_alignment",
    })?;
    Ok(a * bt)
}

/// Weighted Gram-Schmidt orthonormalization preserving the column span.
///
/// Columns are processed in order with one re-orthogonalization pass. Each
/// resulting column is sign-fixed so its entry of largest magnitude is
/// positive. Fails when a column is numerically dependent on its
/// predecessors.
pub fn orthonormalize(u: &Orbitals) -> Result<Orbitals, ManifoldError> {
    let w = u.quad.weights();
    let n_grid = u.n_grid();
    let n = u.n_orbitals();
    let mut q = u.coeffs.clone();

    let dot = |a: &DMatrix<f64>, i: usize, j: usize| -> f64 {
        let mut acc = 0.0;
        for g in 0..n_grid {
            acc += w[g] * a[(g, i)] * a[(g, j)];
        }
        acc
    };

    for j in 0..n {
        let original_norm = dot(&q, j, j).sqrt();
        // Two projection passes keep the result orthogonal to ~1e-15 even
        // for nearly dependent inputs.
        for _ in 0..2 {
            for i in 0..j {
                let r = dot(&q, i, j);
                for g in 0..n_grid {
                    let v = q[(g, i)];
                    q[(g, j)] -= r * v;
                }
            }
        }
        let norm = dot(&q, j, j).sqrt();
        if !norm.is_finite() || norm <= 1e-10 * original_norm || norm == 0.0 {
            return Err(ManifoldError::RankDeficient { column: j });
        }
        let mut peak = 0usize;
        let mut peak_abs = 0.0;
        for g in 0..n_grid {
            let a = q[(g, j)].abs();
            if a > peak_abs {
                peak_abs = a;
                peak = g;
            }
        }
        let sign = if q[(peak, j)] < 0.0 { -1.0 } else { 1.0 };
        let inv = sign / norm;
        for g in 0..n_grid {
            q[(g, j)] *= inv;
        }
    }
    Ok(u.with_coeffs(q))
}

/// Seeded Gaussian frame orthonormalized onto the manifold; used for
/// reproducible initial data.
pub fn random_orthonormal(
    n_grid: usize,
    n_orbitals: usize,
    quad: Arc<Quadrature>,
    seed: u64,
) -> Result<Orbitals, ManifoldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let coeffs = DMatrix::from_fn(n_grid, n_orbitals, |_, _| normal.sample(&mut rng));
    orthonormalize(&Orbitals::new(coeffs, quad)?)
}

/// Dense symmetric eigensolve returning eigenvalues in ascending order with
/// matching eigenvector columns.
pub(crate) fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(eig.eigenvectors.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}
