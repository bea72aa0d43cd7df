//! Empirical probes: per-iteration contraction fitted from a trace and a
//! sampled local Lipschitz constant of the Grassmann gradient.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FlowError, TraceRecord};
use crate::manifold::{grassmann_gradient, orthonormalize, Orbitals};
use crate::models::EnergyModel;

/// Least-squares fit of `log(grad_norm)` against the iteration index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    /// Fitted per-iteration contraction factor `ρ̂ = exp(slope)`.
    pub rho_hat: f64,
    /// Coefficient of determination of the fit.
    pub r_squared: f64,
}

const MIN_RATE_RECORDS: usize = 20;

/// Fits the contraction factor over the final half of the trace.
///
/// Only records with a positive gradient norm enter the fit; at least 20
/// such records are required.
pub fn estimate_rate(trace: &[TraceRecord]) -> Result<RateEstimate, FlowError> {
    let usable: Vec<(f64, f64)> = trace
        .iter()
        .filter(|r| r.grad_norm > 0.0)
        .map(|r| (r.iter as f64, r.grad_norm.ln()))
        .collect();
    if usable.len() < MIN_RATE_RECORDS {
        return Err(FlowError::InsufficientData {
            required: MIN_RATE_RECORDS,
            got: usable.len(),
        });
    }
    let tail = &usable[usable.len() / 2..];

    let n = tail.len() as f64;
    let mean_x = tail.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = tail.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in tail {
        sxx += (x - mean_x) * (x - mean_x);
        syy += (y - mean_y) * (y - mean_y);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let r_squared = if syy <= f64::EPSILON * mean_y.abs().max(1.0) {
        // A constant gradient norm is explained perfectly by slope zero.
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(RateEstimate {
        rho_hat: slope.exp(),
        r_squared,
    })
}

/// Sampled lower bound on the local Lipschitz constant of `∇_G E` near `u`:
/// the maximum of `|||∇_G E(V_1) - ∇_G E(V_2)||| / |||V_1 - V_2|||` over
/// seeded random orthonormal pairs within roughly `radius` of `u`.
pub fn estimate_lipschitz(
    model: &dyn EnergyModel,
    u: &Orbitals,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64, FlowError> {
    if n_samples == 0 {
        return Err(FlowError::InvalidConfig(
            "estimate_lipschitz needs at least one sample".into(),
        ));
    }
    if !radius.is_finite() || radius <= 0.0 {
        return Err(FlowError::InvalidConfig(format!(
            "sampling radius must be positive, got {radius}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let (n_grid, n) = (u.n_grid(), u.n_orbitals());

    let perturbed = |rng: &mut ChaCha8Rng| -> Result<Orbitals, FlowError> {
        let raw = DMatrix::from_fn(n_grid, n, |_, _| normal.sample(rng));
        let direction = u.with_coeffs_checked(raw, "estimate_lipschitz")?;
        let scale = radius * rng.gen_range(0.2..1.0) / direction.trace_norm();
        Ok(orthonormalize(&u.linear_comb(1.0, &direction, scale)?)?)
    };

    let grassmann_at = |v: &Orbitals| -> Result<Orbitals, FlowError> {
        let g = model.gradient(v)?;
        Ok(grassmann_gradient(&g, v)?)
    };

    let mut best: f64 = 0.0;
    for _ in 0..n_samples {
        let v1 = perturbed(&mut rng)?;
        let v2 = perturbed(&mut rng)?;
        let denom = v1.linear_comb(1.0, &v2, -1.0)?.trace_norm();
        if denom < 1e-14 {
            continue;
        }
        let g1 = grassmann_at(&v1)?;
        let g2 = grassmann_at(&v2)?;
        let num = g1.linear_comb(1.0, &g2, -1.0)?.trace_norm();
        best = best.max(num / denom);
    }
    Ok(best)
}

/// Step-size seed `min(2 / L̂_1, dt_max)` from the sampled Lipschitz
/// constant, the empirically optimal-rate choice.
pub fn lipschitz_seeded_dt(
    model: &dyn EnergyModel,
    u: &Orbitals,
    dt_max: f64,
    n_samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64, FlowError> {
    let lipschitz = estimate_lipschitz(model, u, n_samples, radius, seed)?;
    if lipschitz <= 0.0 {
        return Ok(dt_max);
    }
    Ok((2.0 / lipschitz).min(dt_max))
}
