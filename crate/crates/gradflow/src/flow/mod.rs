//! Temporal discretization of the gradient flow `dU/dt = -∇_G E(U)`.
//!
//! One outer step from `U_n` solves the implicit midpoint relation through
//! the split form
//!
//! `U_{n+1/2} = (I + (Δt/2) A_{U_{n+1/2}})^{-1} U_n`,
//! `U_{n+1}   = 2 U_{n+1/2} - U_n`,
//!
//! with the half point obtained by fixed-point iteration: each inner pass
//! re-evaluates the skew generator at the previous half-point iterate and
//! applies one low-rank Cayley solve. Running the inner loop to a tolerance
//! gives the midpoint scheme; freezing it at `p` passes gives the
//! orthogonality preserving iteration, which stays on the manifold for any
//! `p >= 1` and any step size because the last update is an exact Cayley
//! transform.
//!
//! The outer driver guards every step with an energy-descent acceptance
//! rule, optionally adapting the step size (halve on rejection, grow 1.2x
//! after five consecutive acceptances), and records one [`TraceRecord`]
//! per accepted step.

use thiserror::Error;

use crate::manifold::{
    gram, grassmann_gradient, orthonormalize, spectrum_bounds, ManifoldError, Orbitals,
    SkewGenerator,
};
use crate::models::{EnergyModel, ModelError};

mod rate;
mod trace_io;

pub use rate::{estimate_lipschitz, estimate_rate, lipschitz_seeded_dt, RateEstimate};
pub use trace_io::{
    format_float_17, read_trace_csv, trace_csv_string, write_trace_csv, TraceParseError,
    TRACE_HEADER,
};

/// Relative slack in the energy-descent acceptance test.
pub const ENERGY_ACCEPT_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("inner fixed-point iteration did not reach tolerance in {iterations} iterations (last update {residual:.3e})")]
    InnerNoConvergence { iterations: usize, residual: f64 },
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient trace data: need {required} records with positive gradient norm, got {got}")]
    InsufficientData { required: usize, got: usize },
}

/// Step-size policy of the outer driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtPolicy {
    /// Keep `dt` fixed; a rejected step stalls the run.
    Fixed,
    /// Halve on rejection (floor `dt_min`), grow 1.2x after five consecutive
    /// acceptances (cap `dt_max`).
    Adaptive,
}

/// Inner-iteration policy for the half-point solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerMode {
    /// Midpoint scheme: iterate until `|||U^(k) - U^(k-1)||| <= tol * dt`.
    ToTolerance { tol: f64, max_inner: usize },
    /// Orthogonality preserving iteration with exactly `p` inner passes.
    FixedCount { p: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Initial time step.
    pub dt: f64,
    pub dt_policy: DtPolicy,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Stopping threshold on `|||∇_G E(U_n)|||`.
    pub epsilon: f64,
    pub max_outer: usize,
    pub inner_mode: InnerMode,
    /// Fit a per-iteration contraction factor to the trace after the run.
    pub rate_probe: bool,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let fail = |msg: String| Err(FlowError::InvalidConfig(msg));
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !self.dt_min.is_finite() || self.dt_min <= 0.0 || self.dt_max < self.dt_min {
            return fail(format!(
                "need 0 < dt_min <= dt_max, got dt_min = {}, dt_max = {}",
                self.dt_min, self.dt_max
            ));
        }
        if self.dt < self.dt_min || self.dt > self.dt_max {
            return fail(format!(
                "dt = {} outside [dt_min, dt_max] = [{}, {}]",
                self.dt, self.dt_min, self.dt_max
            ));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.max_outer == 0 {
            return fail("max_outer must be at least 1".into());
        }
        match self.inner_mode {
            InnerMode::ToTolerance { tol, max_inner } => {
                if !tol.is_finite() || tol <= 0.0 {
                    return fail(format!("inner tolerance must be positive, got {tol}"));
                }
                if max_inner == 0 {
                    return fail("max_inner must be at least 1".into());
                }
            }
            InnerMode::FixedCount { p } => {
                if p == 0 {
                    return fail("inner iteration count p must be at least 1".into());
                }
            }
        }
        Ok(())
    }
}

/// Result of one outer step attempt.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub u_next: Orbitals,
    /// Last half-point iterate `U^(k)_{n+1/2}`.
    pub u_half: Orbitals,
    pub inner_iters_used: usize,
    /// `|||U^(k) - U^(k-1)|||` of the last inner update.
    pub inner_residual: f64,
    /// Extremal eigenvalues of `⟨U^(k)^T U^(k)⟩` over all inner iterates.
    pub half_spectrum: (f64, f64),
    pub energy_before: f64,
    pub energy_after: f64,
    /// Energy-descent acceptance: `E_after <= E_before + slack |E_before|`.
    pub accepted: bool,
}

/// One accepted outer iteration in a solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Accumulated model time `Σ Δt` through this step.
    pub sim_time: f64,
    /// Energy after the step.
    pub energy: f64,
    /// `|||∇_G E(U_n)|||` at the step's starting frame, the while-condition
    /// quantity.
    pub grad_norm: f64,
    /// `‖⟨U^T U⟩ - I‖_F` of the new frame.
    pub orth_error: f64,
    pub half_spec_min: f64,
    pub half_spec_max: f64,
    pub dt: f64,
    pub inner_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIterations,
    /// Persistent rejection with the step size already at its floor (or a
    /// fixed policy that cannot adapt).
    Stalled,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIterations => "max-iterations",
            RunStatus::Stalled => "stalled",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub final_orbitals: Orbitals,
    pub trace: Vec<TraceRecord>,
    pub status: RunStatus,
    pub final_energy: f64,
    pub final_grad_norm: f64,
    pub rejected_steps: usize,
}

enum InnerStop {
    Count(usize),
    Tolerance { tol: f64, max_inner: usize },
}

struct HalfPoint {
    u_half: Orbitals,
    iters: usize,
    residual: f64,
    spectrum: (f64, f64),
}

/// Fixed-point iteration for the half point; every pass is one Cayley solve
/// with the generator frozen at the previous iterate.
fn solve_half_point(
    model: &dyn EnergyModel,
    u: &Orbitals,
    dt: f64,
    stop: InnerStop,
) -> Result<HalfPoint, FlowError> {
    let s = 0.5 * dt;
    let mut current = u.clone();
    let mut spec_lo = f64::INFINITY;
    let mut spec_hi = f64::NEG_INFINITY;
    let mut residual;
    let mut iters = 0;
    loop {
        iters += 1;
        let g = model.gradient(&current)?;
        let a = SkewGenerator::new(g, current.clone())?;
        let next = crate::manifold::cayley_solve_smw(&a, s, u)?;
        let (lo, hi) = spectrum_bounds(&gram(&next, &next)?);
        spec_lo = spec_lo.min(lo);
        spec_hi = spec_hi.max(hi);
        residual = next.linear_comb(1.0, &current, -1.0)?.trace_norm();
        current = next;
        match stop {
            InnerStop::Count(p) => {
                if iters >= p {
                    break;
                }
            }
            InnerStop::Tolerance { tol, max_inner } => {
                if residual <= tol * dt {
                    break;
                }
                if iters >= max_inner {
                    return Err(FlowError::InnerNoConvergence {
                        iterations: iters,
                        residual,
                    });
                }
            }
        }
    }
    Ok(HalfPoint {
        u_half: current,
        iters,
        residual,
        spectrum: (spec_lo, spec_hi),
    })
}

fn assemble_outcome(
    model: &dyn EnergyModel,
    u: &Orbitals,
    half: HalfPoint,
) -> Result<StepOutcome, FlowError> {
    let u_next = half.u_half.linear_comb(2.0, u, -1.0)?;
    let energy_before = model.energy(u)?;
    let energy_after = model.energy(&u_next)?;
    let accepted = energy_after <= energy_before + ENERGY_ACCEPT_SLACK * energy_before.abs();
    Ok(StepOutcome {
        u_next,
        u_half: half.u_half,
        inner_iters_used: half.iters,
        inner_residual: half.residual,
        half_spectrum: half.spectrum,
        energy_before,
        energy_after,
        accepted,
    })
}

/// One step of the orthogonality preserving iteration: `p` frozen-generator
/// Cayley solves followed by the reflection update `2 U_half - U`.
pub fn step_opi(
    model: &dyn EnergyModel,
    u: &Orbitals,
    dt: f64,
    p: usize,
) -> Result<StepOutcome, FlowError> {
    if p == 0 {
        return Err(FlowError::InvalidConfig(
            "inner iteration count p must be at least 1".into(),
        ));
    }
    let half = solve_half_point(model, u, dt, InnerStop::Count(p))?;
    assemble_outcome(model, u, half)
}

/// One midpoint step: the half-point fixed point is iterated until the
/// update falls below `tol * dt`. Non-convergence within `max_inner` is a
/// rejection signal, not a fatal error; callers shrink `dt` and retry.
pub fn step_midpoint(
    model: &dyn EnergyModel,
    u: &Orbitals,
    dt: f64,
    tol: f64,
    max_inner: usize,
) -> Result<StepOutcome, FlowError> {
    if dt == 0.0 {
        let energy = model.energy(u)?;
        return Ok(StepOutcome {
            u_next: u.clone(),
            u_half: u.clone(),
            inner_iters_used: 0,
            inner_residual: 0.0,
            half_spectrum: spectrum_bounds(&gram(u, u)?),
            energy_before: energy,
            energy_after: energy,
            accepted: true,
        });
    }
    let half = solve_half_point(model, u, dt, InnerStop::Tolerance { tol, max_inner })?;
    assemble_outcome(model, u, half)
}

pub(crate) type Stepper<'a> = dyn Fn(&Orbitals, f64) -> Result<StepOutcome, FlowError> + 'a;

/// Shared outer driver: evaluates the stopping criterion, applies the
/// stepper, and runs the acceptance/step-size policy.
pub(crate) fn drive(
    model: &dyn EnergyModel,
    u0: &Orbitals,
    config: &FlowConfig,
    stepper: &Stepper<'_>,
) -> Result<FlowResult, FlowError> {
    config.validate()?;
    let mut u = orthonormalize(u0)?;
    let mut dt = config.dt;
    let mut sim_time = 0.0;
    let mut consecutive_accepts = 0usize;
    let mut rejected_steps = 0usize;
    let mut trace: Vec<TraceRecord> = Vec::new();

    let status = loop {
        let g = model.gradient(&u)?;
        let grad_norm = grassmann_gradient(&g, &u)?.trace_norm();
        if grad_norm <= config.epsilon {
            break RunStatus::Converged;
        }
        if trace.len() >= config.max_outer {
            break RunStatus::MaxIterations;
        }

        let attempt = stepper(&u, dt);
        // Inner non-convergence and low-rank-solve breakdown are rejection
        // signals handled by shrinking dt, not failures.
        let rejected = match attempt {
            Ok(outcome) if outcome.accepted => {
                sim_time += dt;
                trace.push(TraceRecord {
                    iter: trace.len(),
                    sim_time,
                    energy: outcome.energy_after,
                    grad_norm,
                    orth_error: outcome.u_next.orthogonality_error(),
                    half_spec_min: outcome.half_spectrum.0,
                    half_spec_max: outcome.half_spectrum.1,
                    dt,
                    inner_iters: outcome.inner_iters_used,
                });
                u = outcome.u_next;
                consecutive_accepts += 1;
                if config.dt_policy == DtPolicy::Adaptive && consecutive_accepts >= 5 {
                    dt = (dt * 1.2).min(config.dt_max);
                    consecutive_accepts = 0;
                }
                false
            }
            Ok(_) => true,
            Err(FlowError::InnerNoConvergence { .. }) => true,
            Err(FlowError::Manifold(ManifoldError::NumericalBreakdown { .. })) => true,
            Err(e) => return Err(e),
        };

        if rejected {
            rejected_steps += 1;
            consecutive_accepts = 0;
            match config.dt_policy {
                DtPolicy::Fixed => break RunStatus::Stalled,
                DtPolicy::Adaptive => {
                    if dt <= config.dt_min * (1.0 + 1e-12) {
                        break RunStatus::Stalled;
                    }
                    dt = (dt * 0.5).max(config.dt_min);
                }
            }
        }
    };

    let final_energy = model.energy(&u)?;
    let g = model.gradient(&u)?;
    let final_grad_norm = grassmann_gradient(&g, &u)?.trace_norm();
    Ok(FlowResult {
        final_orbitals: u,
        trace,
        status,
        final_energy,
        final_grad_norm,
        rejected_steps,
    })
}

/// Runs the configured gradient-flow solver from `u0` (orthonormalized
/// first) until `|||∇_G E(U_n)||| <= epsilon`, the outer iteration budget is
/// exhausted, or the step size stalls.
pub fn run_flow(
    model: &dyn EnergyModel,
    u0: &Orbitals,
    config: &FlowConfig,
) -> Result<FlowResult, FlowError> {
    let stepper = |u: &Orbitals, dt: f64| match config.inner_mode {
        InnerMode::FixedCount { p } => step_opi(model, u, dt, p),
        InnerMode::ToTolerance { tol, max_inner } => step_midpoint(model, u, dt, tol, max_inner),
    };
    drive(model, u0, config, &stepper)
}

#[cfg(test)]
mod tests;
