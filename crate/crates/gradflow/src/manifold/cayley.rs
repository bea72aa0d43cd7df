//! The low-rank skew bracket and its Cayley-type solves.
//!
//! For a frame `U` and a gradient-shaped factor `G`, the bracket
//! `A_U = G U^T - U G^T` acts on a frame `V` as
//! `A_U V = G ⟨U^T V⟩ - U ⟨G^T V⟩` and is skew-symmetric in the weighted
//! inner product. The flow direction is `A_U U`, and one time step applies
//! `(I + s A_U)^{-1}`, which exists for every real `s` because skew
//! operators have purely imaginary spectrum.
//!
//! Two solve routes are provided: a dense materialization (test oracle,
//! small grids only) and the Sherman-Morrison-Woodbury reduction to a
//! `2N x 2N` core system, costing `O(N_g N^2) + O(N^3)`.

use nalgebra::DMatrix;

use super::{gram, ManifoldError, Orbitals, DENSE_OPERATOR_LIMIT};

/// The pair `(G, U)` generating the skew operator `A_U = G U^T - U G^T` in
/// factored form; the `N_g x N_g` matrix is never materialized outside the
/// dense oracle.
#[derive(Debug, Clone)]
pub struct SkewGenerator {
    gradient_factor: Orbitals,
    base: Orbitals,
}

impl SkewGenerator {
    pub fn new(gradient_factor: Orbitals, base: Orbitals) -> Result<Self, ManifoldError> {
        super::same_space(&gradient_factor, &base, "SkewGenerator::new")?;
        Ok(Self {
            gradient_factor,
            base,
        })
    }

    pub fn gradient_factor(&self) -> &Orbitals {
        &self.gradient_factor
    }

    pub fn base(&self) -> &Orbitals {
        &self.base
    }
}

/// Applies the factored skew operator: `A_U V = G ⟨U^T V⟩ - U ⟨G^T V⟩`.
pub fn skew_apply(a: &SkewGenerator, v: &Orbitals) -> Result<Orbitals, ManifoldError> {
    let gu = gram(a.base(), v)?;
    let gg = gram(a.gradient_factor(), v)?;
    let mut coeffs = a.gradient_factor().coefficients() * gu.entries();
    coeffs.gemm(-1.0, a.base().coefficients(), gg.entries(), 1.0);
    v.with_coeffs_checked(coeffs, "skew_apply")
}

/// Extended Grassmann gradient `G ⟨U^T U⟩ - U ⟨G^T U⟩`, defined for any
/// frame `U`, on or off the manifold. Equals `skew_apply((G, U), U)`.
pub fn grassmann_gradient(g: &Orbitals, u: &Orbitals) -> Result<Orbitals, ManifoldError> {
    let a = SkewGenerator::new(g.clone(), u.clone())?;
    skew_apply(&a, u)
}

/// Dense oracle for `(I + s A_U)^{-1} RHS`.
///
/// Materializes the operator in grid coordinates and LU-solves. Restricted
/// to `N_g <= 512`; intended for verification, not production stepping.
pub fn cayley_solve_dense(
    a: &SkewGenerator,
    s: f64,
    rhs: &Orbitals,
) -> Result<Orbitals, ManifoldError> {
    super::same_space(a.base(), rhs, "cayley_solve_dense")?;
    let n_grid = rhs.n_grid();
    if n_grid > DENSE_OPERATOR_LIMIT {
        return Err(ManifoldError::DenseSizeLimit {
            n_grid,
            limit: DENSE_OPERATOR_LIMIT,
        });
    }
    // In coordinates A_U = G (W U)^T - U (W G)^T with W = diag(weights).
    let w = rhs.quadrature().weights();
    let weight_rows = |m: &DMatrix<f64>| {
        let mut out = m.clone();
        for (g, mut row) in out.row_iter_mut().enumerate() {
            row *= w[g];
        }
        out
    };
    let wu = weight_rows(a.base().coefficients());
    let wg = weight_rows(a.gradient_factor().coefficients());
    let mut op = DMatrix::<f64>::identity(n_grid, n_grid);
    op += (a.gradient_factor().coefficients() * wu.transpose()) * s;
    op -= (a.base().coefficients() * wg.transpose()) * s;
    let solution = op
        .lu()
        .solve(rhs.coefficients())
        .ok_or(ManifoldError::SolveFailed {
            context: "cayley_solve_dense",
        })?;
    rhs.with_coeffs_checked(solution, "cayley_solve_dense")
}

/// `(I + s A_U)^{-1} RHS` through the Sherman-Morrison-Woodbury identity.
///
/// Writing `s A_U = X Y` with `X = [G  U]` and `Y V = s [⟨U^T V⟩; -⟨G^T V⟩]`,
/// the inverse reduces to the `2N x 2N` core `I + s K` with
/// `K = [[⟨U^T G⟩, ⟨U^T U⟩], [-⟨G^T G⟩, -⟨G^T U⟩]]`:
///
/// `result = RHS - s [G  U] (I + s K)^{-1} [⟨U^T RHS⟩; -⟨G^T RHS⟩]`.
pub fn cayley_solve_smw(
    a: &SkewGenerator,
    s: f64,
    rhs: &Orbitals,
) -> Result<Orbitals, ManifoldError> {
    super::same_space(a.base(), rhs, "cayley_solve_smw")?;
    let n = a.base().n_orbitals();
    let g = a.gradient_factor();
    let u = a.base();

    let ug = gram(u, g)?;
    let uu = gram(u, u)?;
    let gg = gram(g, g)?;
    let gu = gram(g, u)?;

    let mut core = DMatrix::<f64>::identity(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            core[(i, j)] += s * ug.entries()[(i, j)];
            core[(i, n + j)] += s * uu.entries()[(i, j)];
            core[(n + i, j)] -= s * gg.entries()[(i, j)];
            core[(n + i, n + j)] -= s * gu.entries()[(i, j)];
        }
    }

    let u_rhs = gram(u, rhs)?;
    let g_rhs = gram(g, rhs)?;
    let mut stacked = DMatrix::<f64>::zeros(2 * n, rhs.n_orbitals());
    for i in 0..n {
        for j in 0..rhs.n_orbitals() {
            stacked[(i, j)] = u_rhs.entries()[(i, j)];
            stacked[(n + i, j)] = -g_rhs.entries()[(i, j)];
        }
    }

    let lu = core.clone().lu();
    let solved = lu.solve(&stacked).ok_or_else(|| {
        ManifoldError::NumericalBreakdown {
            s,
            cond_estimate: lu_condition_estimate(&lu),
        }
    })?;

    let top = solved.rows(0, n).into_owned();
    let bottom = solved.rows(n, n).into_owned();
    let mut coeffs = rhs.coefficients().clone();
    coeffs.gemm(-s, g.coefficients(), &top, 1.0);
    coeffs.gemm(-s, u.coefficients(), &bottom, 1.0);
    rhs.with_coeffs_checked(coeffs, "cayley_solve_smw")
}

fn lu_condition_estimate(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let upper = lu.u();
    let mut max_diag: f64 = 0.0;
    let mut min_diag = f64::INFINITY;
    for i in 0..upper.nrows().min(upper.ncols()) {
        let d = upper[(i, i)].abs();
        max_diag = max_diag.max(d);
        min_diag = min_diag.min(d);
    }
    if min_diag == 0.0 {
        f64::INFINITY
    } else {
        max_diag / min_diag
    }
}

impl Orbitals {
    pub(crate) fn with_coeffs_checked(
        &self,
        coeffs: DMatrix<f64>,
        context: &'static str,
    ) -> Result<Orbitals, ManifoldError> {
        if coeffs.iter().any(|x| !x.is_finite()) {
            return Err(ManifoldError::NonFinite { context });
        }
        Ok(self.with_coeffs(coeffs))
    }
}
