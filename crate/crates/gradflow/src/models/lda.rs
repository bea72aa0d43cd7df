//! Local density approximation for the exchange-correlation term.
//!
//! Exchange is the closed form `ε_x(ρ) = -(3/4)(3/π)^{1/3} ρ^{1/3}`;
//! correlation is a two-branch parametrization in the Wigner-Seitz radius
//! `r_s = (3 / (4πρ))^{1/3}`:
//!
//! - `r_s >= 1`: `ε_c = -0.1423 / (1 + 1.0529 √r_s + 0.3334 r_s)`
//! - `r_s <  1`: `ε_c = 0.0311 ln r_s - 0.048 + 0.0020 r_s ln r_s - 0.0116 r_s`
//!
//! Potentials follow from `v = ε + ρ dε/dρ = ε - (r_s / 3) dε/dr_s`. The
//! two correlation branches do not meet exactly at `r_s = 1`; the small
//! jump is a property of the parametrization and is left in place.

/// Density floor applied inside every evaluation so the functional is total
/// on `ρ >= 0`.
pub const RHO_MIN: f64 = 1e-12;

const EX_COEFF: f64 = -0.75; // times (3/π)^{1/3} ρ^{1/3}

const GAMMA: f64 = 0.1423;
const BETA1: f64 = 1.0529;
const BETA2: f64 = 0.3334;

const A: f64 = 0.0311;
const B: f64 = -0.048;
const C: f64 = 0.0020;
const D: f64 = -0.0116;

fn clamp_density(rho: f64) -> f64 {
    rho.max(RHO_MIN)
}

/// Exchange energy density and potential `(ε_x, v_x)` at one density value.
///
/// For the `ρ^{1/3}` power law the potential is exactly `(4/3) ε_x`.
pub fn lda_exchange(rho: f64) -> (f64, f64) {
    let rho = clamp_density(rho);
    let eps_x = EX_COEFF * (3.0 / std::f64::consts::PI).powf(1.0 / 3.0) * rho.powf(1.0 / 3.0);
    (eps_x, 4.0 / 3.0 * eps_x)
}

/// Wigner-Seitz radius of a (clamped) density.
pub fn wigner_seitz_radius(rho: f64) -> f64 {
    (3.0 / (4.0 * std::f64::consts::PI * clamp_density(rho))).powf(1.0 / 3.0)
}

/// Correlation energy density and potential `(ε_c, v_c)` at one density
/// value, with the analytic derivative of the active branch.
pub fn lda_correlation(rho: f64) -> (f64, f64) {
    let rs = wigner_seitz_radius(rho);
    let (eps_c, deps_drs) = correlation_branch(rs);
    (eps_c, eps_c - rs / 3.0 * deps_drs)
}

fn correlation_branch(rs: f64) -> (f64, f64) {
    if rs >= 1.0 {
        let sqrt_rs = rs.sqrt();
        let denom = 1.0 + BETA1 * sqrt_rs + BETA2 * rs;
        let eps = -GAMMA / denom;
        let ddenom = BETA1 / (2.0 * sqrt_rs) + BETA2;
        (eps, GAMMA * ddenom / (denom * denom))
    } else {
        let ln_rs = rs.ln();
        let eps = A * ln_rs + B + C * rs * ln_rs + D * rs;
        let deps = A / rs + C * (ln_rs + 1.0) + D;
        (eps, deps)
    }
}

/// Combined `(ε_xc, v_xc)` with each piece toggled independently.
pub fn xc_point(rho: f64, exchange: bool, correlation: bool) -> (f64, f64) {
    let mut eps = 0.0;
    let mut pot = 0.0;
    if exchange {
        let (e, v) = lda_exchange(rho);
        eps += e;
        pot += v;
    }
    if correlation {
        let (e, v) = lda_correlation(rho);
        eps += e;
        pot += v;
    }
    (eps, pot)
}
