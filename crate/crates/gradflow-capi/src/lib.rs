//! C ABI over the gradflow solvers.
//!
//! Handles are opaque pointers created and destroyed by this library;
//! every call returns a [`GfStatus`] and leaves a human-readable message
//! for the last failure in thread-local storage (see
//! [`gf_last_error_message`]). The generated header lands in
//! `include/gradflow.h` at build time.
//!
//! Typical sequence from C:
//!
//! ```c
//! GfModel *model = NULL;
//! GfNucleus nuclei[2] = {{3.0, -1.5}, {1.0, 1.5}};
//! gf_model_kohn_sham_new(128, 0.15, gf_centered_origin(128, 0.15), 2,
//!                        nuclei, 2, 1.0, 1.0, 1.0, true, &model);
//! GfSolverOptions opts = gf_solver_options_default(GF_SOLVER_KIND_OPI, 0.005, 1e-6);
//! GfRunResult *result = NULL;
//! gf_run(model, &opts, 42, &result);
//! ...
//! gf_result_free(result);
//! gf_model_free(model);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gradflow::baselines::run_retraction;
use gradflow::flow::{run_flow, DtPolicy, FlowConfig, FlowResult, InnerMode, RunStatus};
use gradflow::manifold::random_orthonormal;
use gradflow::models::{EnergyModel, Grid1D, KohnSham1DSpec, Ks1dModel, Nucleus};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    ModelError = 3,
    SolverError = 4,
    OutOfRange = 5,
    Panic = 6,
}

/// Solver selector mirroring the CLI kinds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfSolverKind {
    Opi = 0,
    Midpoint = 1,
    Retraction = 2,
}

/// Step-size policy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfDtPolicy {
    Fixed = 0,
    Adaptive = 1,
}

/// Terminal state of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfRunStatus {
    Converged = 0,
    MaxIterations = 1,
    Stalled = 2,
}

/// Point nucleus of the softened external potential.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GfNucleus {
    pub charge: f64,
    pub position: f64,
}

/// Plain-old-data solver configuration; build with
/// [`gf_solver_options_default`] and adjust fields as needed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GfSolverOptions {
    pub kind: GfSolverKind,
    pub dt: f64,
    pub dt_policy: GfDtPolicy,
    pub dt_min: f64,
    pub dt_max: f64,
    pub epsilon: f64,
    pub max_outer: usize,
    /// Inner pass count (orthogonality preserving iteration).
    pub p: usize,
    /// Inner fixed-point tolerance (midpoint).
    pub tol: f64,
    /// Inner iteration cap (midpoint).
    pub max_inner: usize,
}

/// One accepted outer iteration of a run trace.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GfTraceRow {
    pub iter: usize,
    pub sim_time: f64,
    pub energy: f64,
    pub grad_norm: f64,
    pub orth_error: f64,
    pub half_spec_min: f64,
    pub half_spec_max: f64,
    pub dt: f64,
    pub inner_iters: usize,
}

/// Opaque energy model handle.
pub struct GfModel {
    inner: Ks1dModel,
}

/// Opaque run-result handle.
pub struct GfRunResult {
    inner: FlowResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: GfStatus, message: &str) -> GfStatus {
    set_last_error(message);
    status
}

fn guarded(body: impl FnOnce() -> GfStatus) -> GfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(GfStatus::Panic, "internal panic"),
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Origin that centers an `n`-point grid of the given spacing on zero.
#[no_mangle]
pub extern "C" fn gf_centered_origin(grid_points: usize, spacing: f64) -> f64 {
    -0.5 * (grid_points as f64 + 1.0) * spacing
}

unsafe fn nuclei_from_raw(ptr: *const GfNucleus, len: usize) -> Result<Vec<Nucleus>, GfStatus> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if ptr.is_null() {
        return Err(GfStatus::NullArgument);
    }
    let slice = std::slice::from_raw_parts(ptr, len);
    Ok(slice
        .iter()
        .map(|n| Nucleus {
            charge: n.charge,
            position: n.position,
        })
        .collect())
}

fn store_model(model: Ks1dModel, out: *mut *mut GfModel) -> GfStatus {
    let handle = Box::new(GfModel { inner: model });
    unsafe { *out = Box::into_raw(handle) };
    GfStatus::Ok
}

/// Quadratic (linear eigenvalue) model with a softened nuclear potential.
///
/// # Safety
/// `nuclei` must point to `nuclei_len` readable elements (or be NULL when
/// `nuclei_len == 0`) and `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_model_quadratic_new(
    grid_points: usize,
    spacing: f64,
    origin: f64,
    orbitals: usize,
    nuclei: *const GfNucleus,
    nuclei_len: usize,
    soft_core: f64,
    out: *mut *mut GfModel,
) -> GfStatus {
    guarded(|| {
        if out.is_null() {
            return fail(GfStatus::NullArgument, "out pointer is NULL");
        }
        let nuclei = match nuclei_from_raw(nuclei, nuclei_len) {
            Ok(n) => n,
            Err(status) => return fail(status, "nuclei pointer is NULL"),
        };
        let grid = match Grid1D::new(grid_points, spacing, origin) {
            Ok(g) => g,
            Err(e) => return fail(GfStatus::InvalidArgument, &e.to_string()),
        };
        let v_ext = gradflow::models::external_potential(&grid, &nuclei, soft_core);
        match Ks1dModel::quadratic(grid, v_ext, orbitals) {
            Ok(model) => store_model(model, out),
            Err(e) => fail(GfStatus::ModelError, &e.to_string()),
        }
    })
}

/// Kohn-Sham model: softened nuclear attraction, Hartree repulsion, LDA
/// exchange and optional LDA correlation.
///
/// # Safety
/// As [`gf_model_quadratic_new`].
#[no_mangle]
pub unsafe extern "C" fn gf_model_kohn_sham_new(
    grid_points: usize,
    spacing: f64,
    origin: f64,
    orbitals: usize,
    nuclei: *const GfNucleus,
    nuclei_len: usize,
    soft_core: f64,
    hartree_soft_core: f64,
    hartree_scale: f64,
    correlation: bool,
    out: *mut *mut GfModel,
) -> GfStatus {
    guarded(|| {
        if out.is_null() {
            return fail(GfStatus::NullArgument, "out pointer is NULL");
        }
        let nuclei = match nuclei_from_raw(nuclei, nuclei_len) {
            Ok(n) => n,
            Err(status) => return fail(status, "nuclei pointer is NULL"),
        };
        let grid = match Grid1D::new(grid_points, spacing, origin) {
            Ok(g) => g,
            Err(e) => return fail(GfStatus::InvalidArgument, &e.to_string()),
        };
        let spec = KohnSham1DSpec {
            grid,
            nuclei,
            soft_core,
            hartree_soft_core,
            hartree_scale,
            correlation_enabled: correlation,
            n_orbitals: orbitals,
        };
        match Ks1dModel::kohn_sham(&spec) {
            Ok(model) => store_model(model, out),
            Err(e) => fail(GfStatus::ModelError, &e.to_string()),
        }
    })
}

/// Releases a model handle. NULL is accepted.
///
/// # Safety
/// `model` must come from a `gf_model_*_new` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gf_model_free(model: *mut GfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Baseline options: adaptive step policy, derived step bounds, 10000 outer
/// iterations, p = 2 inner passes, 1e-10 inner tolerance.
#[no_mangle]
pub extern "C" fn gf_solver_options_default(
    kind: GfSolverKind,
    dt: f64,
    epsilon: f64,
) -> GfSolverOptions {
    GfSolverOptions {
        kind,
        dt,
        dt_policy: GfDtPolicy::Adaptive,
        dt_min: dt * 2f64.powi(-20),
        dt_max: dt * 8.0,
        epsilon,
        max_outer: 10_000,
        p: 2,
        tol: 1e-10,
        max_inner: 100,
    }
}

fn flow_config(options: &GfSolverOptions) -> FlowConfig {
    FlowConfig {
        dt: options.dt,
        dt_policy: match options.dt_policy {
            GfDtPolicy::Fixed => DtPolicy::Fixed,
            GfDtPolicy::Adaptive => DtPolicy::Adaptive,
        },
        dt_min: options.dt_min,
        dt_max: options.dt_max,
        epsilon: options.epsilon,
        max_outer: options.max_outer,
        inner_mode: match options.kind {
            GfSolverKind::Opi => InnerMode::FixedCount { p: options.p },
            GfSolverKind::Midpoint => InnerMode::ToTolerance {
                tol: options.tol,
                max_inner: options.max_inner,
            },
            GfSolverKind::Retraction => InnerMode::FixedCount { p: 1 },
        },
        rate_probe: false,
    }
}

/// Runs a solver from a seeded random orthonormal frame.
///
/// # Safety
/// `model` and `options` must be valid pointers; `out` must be a valid
/// destination pointer. The returned handle must be released with
/// [`gf_result_free`].
#[no_mangle]
pub unsafe extern "C" fn gf_run(
    model: *const GfModel,
    options: *const GfSolverOptions,
    seed: u64,
    out: *mut *mut GfRunResult,
) -> GfStatus {
    guarded(|| {
        if model.is_null() || options.is_null() || out.is_null() {
            return fail(GfStatus::NullArgument, "model/options/out is NULL");
        }
        let model = &(*model).inner;
        let options = &*options;
        let config = flow_config(options);
        let (n_grid, n_orbitals) = model.dimension();
        let u0 = match random_orthonormal(
            n_grid,
            n_orbitals,
            std::sync::Arc::clone(model.quadrature()),
            seed,
        ) {
            Ok(u0) => u0,
            Err(e) => return fail(GfStatus::SolverError, &e.to_string()),
        };
        let run = match options.kind {
            GfSolverKind::Opi | GfSolverKind::Midpoint => run_flow(model, &u0, &config),
            GfSolverKind::Retraction => run_retraction(model, &u0, &config),
        };
        match run {
            Ok(result) => {
                *out = Box::into_raw(Box::new(GfRunResult { inner: result }));
                GfStatus::Ok
            }
            Err(e) => fail(GfStatus::SolverError, &e.to_string()),
        }
    })
}

/// # Safety
/// `result` must be a live handle from [`gf_run`].
#[no_mangle]
pub unsafe extern "C" fn gf_result_status(result: *const GfRunResult) -> GfRunStatus {
    match (*result).inner.status {
        RunStatus::Converged => GfRunStatus::Converged,
        RunStatus::MaxIterations => GfRunStatus::MaxIterations,
        RunStatus::Stalled => GfRunStatus::Stalled,
    }
}

/// # Safety
/// `result` must be a live handle from [`gf_run`].
#[no_mangle]
pub unsafe extern "C" fn gf_result_iterations(result: *const GfRunResult) -> usize {
    (*result).inner.trace.len()
}

/// # Safety
/// `result` must be a live handle from [`gf_run`].
#[no_mangle]
pub unsafe extern "C" fn gf_result_rejected_steps(result: *const GfRunResult) -> usize {
    (*result).inner.rejected_steps
}

/// # Safety
/// `result` must be a live handle from [`gf_run`].
#[no_mangle]
pub unsafe extern "C" fn gf_result_final_energy(result: *const GfRunResult) -> f64 {
    (*result).inner.final_energy
}

/// # Safety
/// `result` must be a live handle from [`gf_run`].
#[no_mangle]
pub unsafe extern "C" fn gf_result_final_grad_norm(result: *const GfRunResult) -> f64 {
    (*result).inner.final_grad_norm
}

/// # Safety
/// `result` must be a live handle from [`gf_run`].
#[no_mangle]
pub unsafe extern "C" fn gf_result_trace_len(result: *const GfRunResult) -> usize {
    (*result).inner.trace.len()
}

/// Copies trace row `index` into `*row`.
///
/// # Safety
/// `result` must be a live handle and `row` a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_result_trace_row(
    result: *const GfRunResult,
    index: usize,
    row: *mut GfTraceRow,
) -> GfStatus {
    guarded(|| {
        if result.is_null() || row.is_null() {
            return fail(GfStatus::NullArgument, "result/row is NULL");
        }
        let trace = &(*result).inner.trace;
        let Some(r) = trace.get(index) else {
            return fail(
                GfStatus::OutOfRange,
                &format!("row {index} out of range ({} rows)", trace.len()),
            );
        };
        *row = GfTraceRow {
            iter: r.iter,
            sim_time: r.sim_time,
            energy: r.energy,
            grad_norm: r.grad_norm,
            orth_error: r.orth_error,
            half_spec_min: r.half_spec_min,
            half_spec_max: r.half_spec_max,
            dt: r.dt,
            inner_iters: r.inner_iters,
        };
        GfStatus::Ok
    })
}

/// Releases a run-result handle. NULL is accepted.
///
/// # Safety
/// `result` must come from [`gf_run`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gf_result_free(result: *mut GfRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
