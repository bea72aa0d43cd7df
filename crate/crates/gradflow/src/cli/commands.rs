//! Command implementations: execute runs, write traces and summaries, map
//! outcomes to exit codes (0 converged, 1 config/internal error, 2
//! max-iterations or stalled).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::Serialize;

use super::{
    CliError, ExperimentConfig, ResolvedModel, ResolvedSolver, SolverKind, EXIT_ERROR,
    EXIT_INCOMPLETE, EXIT_OK,
};
use crate::baselines::run_retraction;
use crate::flow::{
    estimate_rate, format_float_17, run_flow, write_trace_csv, FlowResult, RunStatus,
};
use crate::models::Ks1dModel;

#[derive(Debug, Serialize)]
struct RateSummary {
    rho_hat: f64,
    r_squared: f64,
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    model: &'a str,
    solver: &'a str,
    seed: u64,
    status: &'a str,
    iterations: usize,
    rejected_steps: usize,
    final_energy: f64,
    final_grad_norm: f64,
    wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<RateSummary>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn execute(
    model: &Ks1dModel,
    u0: &crate::manifold::Orbitals,
    solver: &ResolvedSolver,
) -> Result<FlowResult, CliError> {
    let result = match solver.kind {
        SolverKind::Opi | SolverKind::Midpoint => run_flow(model, u0, &solver.flow)?,
        SolverKind::Retraction => run_retraction(model, u0, &solver.flow)?,
    };
    Ok(result)
}

/// Runs one solver and writes `trace.csv` + `summary.json` into `dir`.
fn run_into_dir(
    resolved_model: &ResolvedModel,
    solver: &ResolvedSolver,
    seed: u64,
    dir: &Path,
) -> Result<FlowResult, CliError> {
    let model = resolved_model.build()?;
    let u0 = resolved_model.initial_orbitals(seed)?;
    let started = Instant::now();
    let result = execute(&model, &u0, solver)?;
    let wall_time_seconds = started.elapsed().as_secs_f64();

    let mut trace_bytes = Vec::new();
    write_trace_csv(&mut trace_bytes, &result.trace).map_err(|source| CliError::Io {
        path: dir.join("trace.csv"),
        source,
    })?;
    write_file(&dir.join("trace.csv"), &trace_bytes)?;

    let rate = if solver.flow.rate_probe {
        estimate_rate(&result.trace)
            .ok()
            .map(|fit| RateSummary {
                rho_hat: fit.rho_hat,
                r_squared: fit.r_squared,
            })
    } else {
        None
    };
    let summary = RunSummary {
        model: resolved_model.kind.as_str(),
        solver: solver.kind.as_str(),
        seed,
        status: result.status.as_str(),
        iterations: result.trace.len(),
        rejected_steps: result.rejected_steps,
        final_energy: result.final_energy,
        final_grad_norm: result.final_grad_norm,
        wall_time_seconds,
        rate,
    };
    let json = serde_json::to_vec_pretty(&summary).expect("summary serialization cannot fail");
    write_file(&dir.join("summary.json"), &json)?;
    Ok(result)
}

fn status_exit(statuses: &[RunStatus]) -> i32 {
    if statuses.iter().all(|s| *s == RunStatus::Converged) {
        EXIT_OK
    } else {
        EXIT_INCOMPLETE
    }
}

fn report(err: &CliError) -> i32 {
    eprintln!("flow: {err}");
    EXIT_ERROR
}

/// `flow run <config>`: one model, one solver, outputs under `output_dir`.
pub fn cmd_run(config_path: &Path) -> i32 {
    let inner = || -> Result<RunStatus, CliError> {
        let config = ExperimentConfig::load(config_path)?;
        let (model, solver) = config.for_run().map_err(|message| CliError::Config {
            path: config_path.to_path_buf(),
            message,
        })?;
        let result = run_into_dir(&model, &solver, config.seed, &config.output_dir)?;
        Ok(result.status)
    };
    match inner() {
        Ok(status) => status_exit(&[status]),
        Err(e) => report(&e),
    }
}

fn blank_or(value: Option<f64>) -> String {
    value.map(format_float_17).unwrap_or_default()
}

/// `flow compare <config>`: runs two solvers from the same seeded initial
/// frame, emitting per-solver outputs under `a/` and `b/` plus a side-by-side
/// `compare.csv`.
pub fn cmd_compare(config_path: &Path) -> i32 {
    let inner = || -> Result<Vec<RunStatus>, CliError> {
        let config = ExperimentConfig::load(config_path)?;
        let (model, solvers) = config.for_compare().map_err(|message| CliError::Config {
            path: config_path.to_path_buf(),
            message,
        })?;
        let labels = ["a", "b"];
        let mut results = Vec::new();
        for (solver, label) in solvers.iter().zip(labels) {
            let dir = config.output_dir.join(label);
            results.push(run_into_dir(&model, solver, config.seed, &dir)?);
        }

        let rows = results[0].trace.len().max(results[1].trace.len());
        let mut csv = String::from(
            "iter,energy_a,energy_b,energy_gap,half_spec_min_a,half_spec_max_a,half_spec_min_b,half_spec_max_b\n",
        );
        for i in 0..rows {
            let a = results[0].trace.get(i);
            let b = results[1].trace.get(i);
            let gap = match (a, b) {
                (Some(x), Some(y)) => Some(x.energy - y.energy),
                _ => None,
            };
            let line = format!(
                "{},{},{},{},{},{},{},{}\n",
                i,
                blank_or(a.map(|r| r.energy)),
                blank_or(b.map(|r| r.energy)),
                blank_or(gap),
                blank_or(a.map(|r| r.half_spec_min)),
                blank_or(a.map(|r| r.half_spec_max)),
                blank_or(b.map(|r| r.half_spec_min)),
                blank_or(b.map(|r| r.half_spec_max)),
            );
            csv.push_str(&line);
        }
        write_file(&config.output_dir.join("compare.csv"), csv.as_bytes())?;
        Ok(results.into_iter().map(|r| r.status).collect())
    };
    match inner() {
        Ok(statuses) => status_exit(&statuses),
        Err(e) => report(&e),
    }
}

struct SweepOutcome {
    status: RunStatus,
    iterations: usize,
    final_energy: f64,
    final_grad_norm: f64,
    rate: Option<(f64, f64)>,
}

struct SweepRow {
    dir: String,
    dt: f64,
    p: Option<usize>,
    outcome: Result<SweepOutcome, String>,
}

fn sweep_threads() -> usize {
    std::env::var("FLOW_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// `flow sweep <config>`: cartesian grid over `[sweep]` parameters, one
/// output directory per point, concurrent up to `FLOW_THREADS`.
pub fn cmd_sweep(config_path: &Path) -> i32 {
    let inner = || -> Result<Vec<SweepRow>, CliError> {
        let config = ExperimentConfig::load(config_path)?;
        let (model, _base, points) = config.for_sweep().map_err(|message| CliError::Config {
            path: config_path.to_path_buf(),
            message,
        })?;
        let solver_section = config.solver.as_ref().expect("validated by for_sweep");

        struct Job {
            index: usize,
            dir_name: String,
            dt: f64,
            p: Option<usize>,
            solver: ResolvedSolver,
            dir: PathBuf,
        }
        let jobs: Vec<Job> = points
            .iter()
            .enumerate()
            .map(|(index, &(dt, p))| {
                let dir_name = match p {
                    Some(p) => format!("dt_{dt:e}_p_{p}"),
                    None => format!("dt_{dt:e}"),
                };
                let solver = solver_section
                    .with_overrides(dt, p)
                    .resolve()
                    .expect("validated by for_sweep");
                let dir = config.output_dir.join(&dir_name);
                Job {
                    index,
                    dir_name,
                    dt,
                    p,
                    solver,
                    dir,
                }
            })
            .collect();

        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel::<(usize, SweepRow)>();
        let workers = sweep_threads().min(jobs.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let jobs = &jobs;
                let next = &next;
                let model = &model;
                let seed = config.seed;
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let job = &jobs[i];
                    let outcome = run_into_dir(model, &job.solver, seed, &job.dir)
                        .map(|result| {
                            let rate = if job.solver.flow.rate_probe {
                                estimate_rate(&result.trace)
                                    .ok()
                                    .map(|f| (f.rho_hat, f.r_squared))
                            } else {
                                None
                            };
                            SweepOutcome {
                                status: result.status,
                                iterations: result.trace.len(),
                                final_energy: result.final_energy,
                                final_grad_norm: result.final_grad_norm,
                                rate,
                            }
                        })
                        .map_err(|e| e.to_string());
                    let row = SweepRow {
                        dir: job.dir_name.clone(),
                        dt: job.dt,
                        p: job.p,
                        outcome,
                    };
                    if tx.send((job.index, row)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
        });

        let mut rows: Vec<Option<SweepRow>> = (0..jobs.len()).map(|_| None).collect();
        for (index, row) in rx {
            rows[index] = Some(row);
        }
        let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("worker ran")).collect();

        let mut csv = String::from(
            "run,dir,dt,p,status,iterations,final_energy,final_grad_norm,rho_hat,r_squared\n",
        );
        for (i, row) in rows.iter().enumerate() {
            let p_field = row.p.map(|p| p.to_string()).unwrap_or_default();
            match &row.outcome {
                Ok(outcome) => {
                    let (rho, r2) = match outcome.rate {
                        Some((rho, r2)) => (format_float_17(rho), format_float_17(r2)),
                        None => (String::new(), String::new()),
                    };
                    csv.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{}\n",
                        i,
                        row.dir,
                        format_float_17(row.dt),
                        p_field,
                        outcome.status.as_str(),
                        outcome.iterations,
                        format_float_17(outcome.final_energy),
                        format_float_17(outcome.final_grad_norm),
                        rho,
                        r2,
                    ));
                }
                Err(message) => {
                    eprintln!("flow: sweep point {} failed: {message}", row.dir);
                    csv.push_str(&format!(
                        "{},{},{},{},error,,,,,\n",
                        i,
                        row.dir,
                        format_float_17(row.dt),
                        p_field,
                    ));
                }
            }
        }
        write_file(&config.output_dir.join("index.csv"), csv.as_bytes())?;
        Ok(rows)
    };
    match inner() {
        Ok(rows) => {
            if rows.iter().any(|r| r.outcome.is_err()) {
                EXIT_ERROR
            } else {
                let statuses: Vec<RunStatus> = rows
                    .iter()
                    .map(|r| r.outcome.as_ref().unwrap().status)
                    .collect();
                status_exit(&statuses)
            }
        }
        Err(e) => report(&e),
    }
}
