//! Experiment configuration and the `run`/`compare`/`sweep` commands.
//!
//! Configs are TOML with three sections: `[model]`, `[solver]` (or a
//! two-element `[[solvers]]` list for comparisons) and an optional `[sweep]`
//! grid, plus top-level `seed` and `output_dir`. Unknown keys are rejected,
//! fields that do not apply to the chosen model or solver kind are rejected,
//! and defaults are filled during resolution so a config round-trips through
//! its normalized form.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{DtPolicy, FlowConfig, FlowError, InnerMode};
use crate::manifold::ManifoldError;
use crate::models::{Grid1D, KohnSham1DSpec, Ks1dModel, ModelError, Nucleus};

mod commands;

pub use commands::{cmd_compare, cmd_run, cmd_sweep};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCOMPLETE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solvers: Option<Vec<SolverSection>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Quadratic,
    Hartree,
    #[serde(rename = "kohn_sham_1d")]
    KohnSham1d,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Quadratic => "quadratic",
            ModelKind::Hartree => "hartree",
            ModelKind::KohnSham1d => "kohn_sham_1d",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NucleusSection {
    pub charge: f64,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub grid_points: usize,
    pub spacing: f64,
    /// Left end of the domain; defaults to a grid centered on zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<f64>,
    pub orbitals: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nuclei: Vec<NucleusSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub soft_core: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hartree_soft_core: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hartree_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Opi,
    Midpoint,
    Retraction,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Opi => "opi",
            SolverKind::Midpoint => "midpoint",
            SolverKind::Retraction => "retraction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicySection {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub kind: SolverKind,
    pub dt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_policy: Option<DtPolicySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
    /// Inner pass count; orthogonality preserving iteration only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    /// Inner fixed-point tolerance; midpoint only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Inner iteration cap; midpoint only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_inner: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_probe: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<usize>>,
}

/// One sweep grid point: the step size and, for the fixed-inner-count
/// solver, the inner pass count.
pub type SweepPoint = (f64, Option<usize>);

/// Fully validated model description ready to build.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedModel {
    pub kind: ModelKind,
    pub grid: Grid1D,
    pub orbitals: usize,
    pub nuclei: Vec<Nucleus>,
    pub soft_core: f64,
    pub hartree_soft_core: f64,
    pub hartree_scale: f64,
    pub correlation: bool,
}

impl ResolvedModel {
    pub fn build(&self) -> Result<Ks1dModel, ModelError> {
        match self.kind {
            ModelKind::Quadratic => {
                let v_ext =
                    crate::models::external_potential(&self.grid, &self.nuclei, self.soft_core);
                Ks1dModel::quadratic(self.grid.clone(), v_ext, self.orbitals)
            }
            ModelKind::Hartree => {
                let v_ext =
                    crate::models::external_potential(&self.grid, &self.nuclei, self.soft_core);
                Ks1dModel::nonlinear_hartree(
                    self.grid.clone(),
                    v_ext,
                    self.orbitals,
                    self.hartree_scale,
                    self.hartree_soft_core,
                )
            }
            ModelKind::KohnSham1d => Ks1dModel::kohn_sham(&KohnSham1DSpec {
                grid: self.grid.clone(),
                nuclei: self.nuclei.clone(),
                soft_core: self.soft_core,
                hartree_soft_core: self.hartree_soft_core,
                hartree_scale: self.hartree_scale,
                correlation_enabled: self.correlation,
                n_orbitals: self.orbitals,
            }),
        }
    }

    /// Seeded initial frame: Gaussian entries, orthonormalized.
    pub fn initial_orbitals(&self, seed: u64) -> Result<crate::manifold::Orbitals, ManifoldError> {
        let quad: Arc<crate::manifold::Quadrature> = self.grid.quadrature();
        crate::manifold::random_orthonormal(self.grid.n_points(), self.orbitals, quad, seed)
    }
}

/// Fully validated solver description.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSolver {
    pub kind: SolverKind,
    pub flow: FlowConfig,
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ResolvedModel, String> {
        let reject = |field: &str, kind: ModelKind| {
            Err(format!(
                "model.{field} does not apply to model kind `{}`",
                kind.as_str()
            ))
        };
        match self.kind {
            ModelKind::Quadratic => {
                if self.hartree_soft_core.is_some() {
                    return reject("hartree_soft_core", self.kind);
                }
                if self.hartree_scale.is_some() {
                    return reject("hartree_scale", self.kind);
                }
                if self.correlation.is_some() {
                    return reject("correlation", self.kind);
                }
            }
            ModelKind::Hartree => {
                if self.correlation.is_some() {
                    return reject("correlation", self.kind);
                }
            }
            ModelKind::KohnSham1d => {}
        }
        let grid = match self.origin {
            Some(origin) => Grid1D::new(self.grid_points, self.spacing, origin),
            None => Grid1D::centered(self.grid_points, self.spacing),
        }
        .map_err(|e| e.to_string())?;
        if self.orbitals == 0 || self.orbitals > self.grid_points {
            return Err(format!(
                "model.orbitals = {} must lie in [1, {}]",
                self.orbitals, self.grid_points
            ));
        }
        let nuclei: Vec<Nucleus> = self
            .nuclei
            .iter()
            .map(|n| Nucleus {
                charge: n.charge,
                position: n.position,
            })
            .collect();
        Ok(ResolvedModel {
            kind: self.kind,
            grid,
            orbitals: self.orbitals,
            nuclei,
            soft_core: self.soft_core.unwrap_or(1.0),
            hartree_soft_core: self.hartree_soft_core.unwrap_or(1.0),
            hartree_scale: self.hartree_scale.unwrap_or(1.0),
            correlation: self.correlation.unwrap_or(true),
        })
    }

    fn normalized(&self) -> Result<ModelSection, String> {
        let resolved = self.resolve()?;
        Ok(ModelSection {
            kind: resolved.kind,
            grid_points: resolved.grid.n_points(),
            spacing: resolved.grid.spacing(),
            origin: Some(resolved.grid.origin()),
            orbitals: resolved.orbitals,
            nuclei: resolved
                .nuclei
                .iter()
                .map(|n| NucleusSection {
                    charge: n.charge,
                    position: n.position,
                })
                .collect(),
            soft_core: Some(resolved.soft_core),
            hartree_soft_core: match self.kind {
                ModelKind::Quadratic => None,
                _ => Some(resolved.hartree_soft_core),
            },
            hartree_scale: match self.kind {
                ModelKind::Quadratic => None,
                _ => Some(resolved.hartree_scale),
            },
            correlation: match self.kind {
                ModelKind::KohnSham1d => Some(resolved.correlation),
                _ => None,
            },
        })
    }
}

impl SolverSection {
    pub fn resolve(&self) -> Result<ResolvedSolver, String> {
        let reject = |field: &str, kind: SolverKind| {
            Err(format!(
                "solver.{field} does not apply to solver kind `{}`",
                kind.as_str()
            ))
        };
        match self.kind {
            SolverKind::Opi => {
                if self.tol.is_some() {
                    return reject("tol", self.kind);
                }
                if self.max_inner.is_some() {
                    return reject("max_inner", self.kind);
                }
            }
            SolverKind::Midpoint => {
                if self.p.is_some() {
                    return reject("p", self.kind);
                }
            }
            SolverKind::Retraction => {
                if self.p.is_some() {
                    return reject("p", self.kind);
                }
                if self.tol.is_some() {
                    return reject("tol", self.kind);
                }
                if self.max_inner.is_some() {
                    return reject("max_inner", self.kind);
                }
            }
        }
        let dt_policy = match self.dt_policy.unwrap_or(DtPolicySection::Adaptive) {
            DtPolicySection::Fixed => DtPolicy::Fixed,
            DtPolicySection::Adaptive => DtPolicy::Adaptive,
        };
        let (default_min, default_max) = match dt_policy {
            DtPolicy::Fixed => (self.dt, self.dt),
            DtPolicy::Adaptive => (self.dt * 2f64.powi(-20), self.dt * 8.0),
        };
        let inner_mode = match self.kind {
            SolverKind::Opi => InnerMode::FixedCount {
                p: self.p.unwrap_or(2),
            },
            SolverKind::Midpoint => InnerMode::ToTolerance {
                tol: self.tol.unwrap_or(1e-10),
                max_inner: self.max_inner.unwrap_or(100),
            },
            // The retraction driver ignores the inner mode.
            SolverKind::Retraction => InnerMode::FixedCount { p: 1 },
        };
        let flow = FlowConfig {
            dt: self.dt,
            dt_policy,
            dt_min: self.dt_min.unwrap_or(default_min),
            dt_max: self.dt_max.unwrap_or(default_max),
            epsilon: self.epsilon,
            max_outer: self.max_outer.unwrap_or(10_000),
            inner_mode,
            rate_probe: self.rate_probe.unwrap_or(false),
        };
        flow.validate().map_err(|e| e.to_string())?;
        Ok(ResolvedSolver {
            kind: self.kind,
            flow,
        })
    }

    fn normalized(&self) -> Result<SolverSection, String> {
        let resolved = self.resolve()?;
        let (p, tol, max_inner) = match resolved.flow.inner_mode {
            InnerMode::FixedCount { p } => match self.kind {
                SolverKind::Opi => (Some(p), None, None),
                _ => (None, None, None),
            },
            InnerMode::ToTolerance { tol, max_inner } => (None, Some(tol), Some(max_inner)),
        };
        Ok(SolverSection {
            kind: self.kind,
            dt: resolved.flow.dt,
            dt_policy: Some(match resolved.flow.dt_policy {
                DtPolicy::Fixed => DtPolicySection::Fixed,
                DtPolicy::Adaptive => DtPolicySection::Adaptive,
            }),
            dt_min: Some(resolved.flow.dt_min),
            dt_max: Some(resolved.flow.dt_max),
            epsilon: resolved.flow.epsilon,
            max_outer: Some(resolved.flow.max_outer),
            p,
            tol,
            max_inner,
            rate_probe: Some(resolved.flow.rate_probe),
        })
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })
    }

    /// Section layout for `run`: exactly `[solver]`.
    pub fn for_run(&self) -> Result<(ResolvedModel, ResolvedSolver), String> {
        if self.solvers.is_some() {
            return Err("`run` uses a single [solver] section, not [[solvers]]".into());
        }
        if self.sweep.is_some() {
            return Err("`run` does not take a [sweep] section".into());
        }
        let solver = self
            .solver
            .as_ref()
            .ok_or("missing [solver] section")?
            .resolve()?;
        Ok((self.model.resolve()?, solver))
    }

    /// Section layout for `compare`: exactly two `[[solvers]]` entries.
    pub fn for_compare(&self) -> Result<(ResolvedModel, Vec<ResolvedSolver>), String> {
        if self.solver.is_some() {
            return Err("`compare` uses [[solvers]], not a single [solver] section".into());
        }
        if self.sweep.is_some() {
            return Err("`compare` does not take a [sweep] section".into());
        }
        let sections = self
            .solvers
            .as_ref()
            .ok_or("missing [[solvers]] sections")?;
        if sections.len() != 2 {
            return Err(format!(
                "`compare` needs exactly two [[solvers]] entries, got {}",
                sections.len()
            ));
        }
        let solvers = sections
            .iter()
            .map(|s| s.resolve())
            .collect::<Result<Vec<_>, _>>()?;
        Ok((self.model.resolve()?, solvers))
    }

    /// Section layout for `sweep`: `[solver]` plus `[sweep]` grids.
    pub fn for_sweep(
        &self,
    ) -> Result<(ResolvedModel, ResolvedSolver, Vec<SweepPoint>), String> {
        if self.solvers.is_some() {
            return Err("`sweep` uses a single [solver] section, not [[solvers]]".into());
        }
        let base_section = self.solver.as_ref().ok_or("missing [solver] section")?;
        let base = base_section.resolve()?;
        let sweep = self.sweep.as_ref().ok_or("missing [sweep] section")?;
        if sweep.dt.is_none() && sweep.p.is_none() {
            return Err("[sweep] must list at least one of `dt`, `p`".into());
        }
        if sweep.p.is_some() && base.kind != SolverKind::Opi {
            return Err("sweep over p requires solver kind `opi`".into());
        }
        if let Some(dts) = &sweep.dt {
            if dts.is_empty() {
                return Err("sweep.dt must not be empty".into());
            }
        }
        if let Some(ps) = &sweep.p {
            if ps.is_empty() {
                return Err("sweep.p must not be empty".into());
            }
        }
        let dts = sweep.dt.clone().unwrap_or_else(|| vec![base.flow.dt]);
        let ps: Vec<Option<usize>> = match &sweep.p {
            Some(ps) => ps.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut points = Vec::new();
        for &dt in &dts {
            for &p in &ps {
                points.push((dt, p));
            }
        }
        // Validate each grid point by resolving its overridden section.
        for &(dt, p) in &points {
            base_section.with_overrides(dt, p).resolve()?;
        }
        Ok((self.model.resolve()?, base, points))
    }

    /// Canonical form with every default made explicit; semantic content is
    /// unchanged.
    pub fn normalized(&self) -> Result<ExperimentConfig, String> {
        Ok(ExperimentConfig {
            model: self.model.normalized()?,
            solver: match &self.solver {
                Some(s) => Some(s.normalized()?),
                None => None,
            },
            solvers: match &self.solvers {
                Some(list) => Some(
                    list.iter()
                        .map(|s| s.normalized())
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                None => None,
            },
            sweep: self.sweep.clone(),
            seed: self.seed,
            output_dir: self.output_dir.clone(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }
}

impl SolverSection {
    /// Copy with `dt` (and optionally `p`) replaced; used by sweeps. Step
    /// bounds left at `None` re-derive from the new `dt` on resolution.
    pub fn with_overrides(&self, dt: f64, p: Option<usize>) -> SolverSection {
        let mut out = self.clone();
        out.dt = dt;
        if let Some(p) = p {
            out.p = Some(p);
        }
        out
    }
}
