//! End-to-end tests of the `flow` binary: exit codes, emitted files, CSV
//! schemas and cross-invocation determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gradflow::flow::read_trace_csv;

fn flow_binary() -> &'static str {
    env!("CARGO_BIN_EXE_flow")
}

fn run_flow_cli(args: &[&str]) -> Output {
    Command::new(flow_binary())
        .args(args)
        .output()
        .expect("spawn flow binary")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn quadratic_run_config(out_dir: &Path) -> String {
    format!(
        r#"
seed = 7
output_dir = {out_dir:?}

[model]
kind = "quadratic"
grid_points = 32
spacing = 0.5
orbitals = 2
nuclei = [{{ charge = 2.0, position = 0.0 }}]

[solver]
kind = "opi"
dt = 0.02
dt_max = 0.02
epsilon = 1.0e-7
max_outer = 20000
p = 2
"#
    )
}

#[test]
fn version_flag_reports_name_and_version() {
    let out = run_flow_cli(&["--version"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("flow {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_1() {
    let out = run_flow_cli(&[]);
    assert_eq!(out.status.code(), Some(1));
    let out = run_flow_cli(&["frobnicate", "x.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_converges_and_emits_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), "run.toml", &quadratic_run_config(&out_dir));

    let out = run_flow_cli(&["run", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let trace_text = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let trace = read_trace_csv(&trace_text).unwrap();
    assert!(!trace.is_empty());
    assert!(trace.iter().all(|r| r.orth_error <= 1e-10));
    // Emitted floats reparse to exactly the serialized values.
    let reparsed = read_trace_csv(&trace_text).unwrap();
    assert_eq!(trace, reparsed);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["status"], "converged");
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["solver"], "opi");
    assert!(summary["final_grad_norm"].as_f64().unwrap() <= 1e-7);
    assert!(summary["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn missing_required_field_names_it_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let body = quadratic_run_config(&out_dir).replace("epsilon = 1.0e-7\n", "");
    let config = write_config(dir.path(), "broken.toml", &body);

    let out = run_flow_cli(&["run", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("epsilon"), "stderr was: {stderr}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let body = quadratic_run_config(&out_dir) + "\n[telemetry]\nenabled = true\n";
    let config = write_config(dir.path(), "broken.toml", &body);

    let out = run_flow_cli(&["run", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("telemetry"), "stderr was: {stderr}");
}

#[test]
fn hartree_model_kind_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let body = quadratic_run_config(&out_dir)
        .replace("kind = \"quadratic\"", "kind = \"hartree\"")
        .replace(
            "orbitals = 2",
            "orbitals = 2\nhartree_scale = 0.5\nhartree_soft_core = 1.0",
        );
    let config = write_config(dir.path(), "hartree.toml", &body);
    let out = run_flow_cli(&["run", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["model"], "hartree");
    assert_eq!(summary["status"], "converged");
}

#[test]
fn nonconvergent_run_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let body = quadratic_run_config(&out_dir).replace("max_outer = 20000", "max_outer = 3");
    let config = write_config(dir.path(), "short.toml", &body);

    let out = run_flow_cli(&["run", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["status"], "max-iterations");
}

fn compare_config(out_dir: &Path, second_kind: &str) -> String {
    format!(
        r#"
seed = 11
output_dir = {out_dir:?}

[model]
kind = "quadratic"
grid_points = 32
spacing = 0.5
orbitals = 2
nuclei = [{{ charge = 2.0, position = 0.0 }}]

[[solvers]]
kind = "opi"
dt = 0.02
dt_max = 0.02
epsilon = 1.0e-7
max_outer = 20000
p = 2

[[solvers]]
kind = "{second_kind}"
dt = 0.02
dt_max = 0.02
epsilon = 1.0e-7
max_outer = 20000
"#
    )
}

#[test]
fn compare_shows_inside_vs_outside_auxiliary_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cmp");
    let config = write_config(dir.path(), "cmp.toml", &compare_config(&out_dir, "retraction"));

    let out = run_flow_cli(&["compare", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("a/trace.csv").exists());
    assert!(out_dir.join("b/summary.json").exists());

    let text = std::fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iter,energy_a,energy_b,energy_gap,half_spec_min_a,half_spec_max_a,half_spec_min_b,half_spec_max_b"
    );
    let mut saw_a = false;
    let mut saw_b = false;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8);
        // Solver a (midpoint-type) stays inside the manifold, solver b
        // (retraction) outside.
        if !fields[5].is_empty() {
            saw_a = true;
            assert!(fields[5].parse::<f64>().unwrap() <= 1.0 + 1e-12);
        }
        if !fields[6].is_empty() {
            saw_b = true;
            assert!(fields[6].parse::<f64>().unwrap() >= 1.0 - 1e-12);
        }
    }
    assert!(saw_a && saw_b);
}

#[test]
fn compare_of_identical_solvers_has_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cmp");
    let config = write_config(dir.path(), "cmp.toml", &compare_config(&out_dir, "opi"));
    // Make the second solver identical to the first.
    let body = std::fs::read_to_string(&config).unwrap();
    let body = body.replace("kind = \"opi\"\ndt = 0.02\ndt_max = 0.02\nepsilon = 1.0e-7\nmax_outer = 20000\n\n", "kind = \"opi\"\ndt = 0.02\ndt_max = 0.02\nepsilon = 1.0e-7\nmax_outer = 20000\np = 2\n\n");
    std::fs::write(&config, body).unwrap();

    let out = run_flow_cli(&["compare", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[3].parse::<f64>().unwrap(), 0.0);
    }
}

fn sweep_config(out_dir: &Path) -> String {
    format!(
        r#"
seed = 13
output_dir = {out_dir:?}

[model]
kind = "kohn_sham_1d"
grid_points = 48
spacing = 0.35
orbitals = 2
nuclei = [
  {{ charge = 3.0, position = -1.5 }},
  {{ charge = 1.0, position = 1.5 }},
]

[solver]
kind = "opi"
dt = 0.01
epsilon = 1.0e-6
max_outer = 8000
rate_probe = true

[sweep]
dt = [0.005, 0.01]
p = [1, 2, 4]
"#
    )
}

#[test]
fn sweep_runs_grid_concurrently_and_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("sweep_a");
    let out_b = dir.path().join("sweep_b");

    for (out_dir, threads) in [(&out_a, "4"), (&out_b, "1")] {
        let config = write_config(
            dir.path(),
            &format!("sweep_{threads}.toml"),
            &sweep_config(out_dir),
        );
        let out = Command::new(flow_binary())
            .args(["sweep", config.to_str().unwrap()])
            .env("FLOW_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }

    let index_a = std::fs::read(out_a.join("index.csv")).unwrap();
    let index_b = std::fs::read(out_b.join("index.csv")).unwrap();
    assert_eq!(index_a, index_b, "sweep output depends on thread count");

    let text = String::from_utf8(index_a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "run,dir,dt,p,status,iterations,final_energy,final_grad_norm,rho_hat,r_squared"
    );
    assert_eq!(lines.len(), 1 + 6);

    // Converged points carry a fitted contraction factor.
    for line in lines.iter().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[4], "converged", "row: {line}");
        let rho: f64 = fields[8].parse().expect("rho_hat populated");
        assert!(rho > 0.0 && rho < 1.0, "rho_hat {rho} out of (0, 1)");
    }

    // Per-point outputs are identical across the two sweeps, and the
    // inner-iteration column reflects the swept p.
    for p in [1usize, 2, 4] {
        for dt in ["5e-3", "1e-2"] {
            let rel = format!("dt_{dt}_p_{p}/trace.csv");
            let a = std::fs::read(out_a.join(&rel)).unwrap();
            let b = std::fs::read(out_b.join(&rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between sweeps");
            let trace = read_trace_csv(std::str::from_utf8(&a).unwrap()).unwrap();
            assert!(!trace.is_empty());
            assert!(
                trace.iter().all(|r| r.inner_iters == p),
                "{rel}: inner_iters differs from p = {p}"
            );
        }
    }
}

#[test]
fn sweep_past_the_stability_edge_keeps_orthogonality() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let body = sweep_config(&out_dir)
        .replace("dt = [0.005, 0.01]", "dt = [0.005, 1.0]")
        .replace("p = [1, 2, 4]", "p = [2]")
        .replace("max_outer = 8000", "max_outer = 400");
    let config = write_config(dir.path(), "sweep.toml", &body);

    let out = Command::new(flow_binary())
        .args(["sweep", config.to_str().unwrap()])
        .env("FLOW_THREADS", "2")
        .output()
        .unwrap();
    // The oversized step cannot converge in the budget; the grid finishes
    // with exit 2, never with orthogonality loss.
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    for name in ["dt_5e-3_p_2", "dt_1e0_p_2"] {
        let text = std::fs::read_to_string(out_dir.join(name).join("trace.csv")).unwrap();
        let trace = read_trace_csv(&text).unwrap();
        assert!(
            trace.iter().all(|r| r.orth_error <= 1e-10),
            "{name} lost orthogonality"
        );
    }
    let index = std::fs::read_to_string(out_dir.join("index.csv")).unwrap();
    assert!(index.contains("max-iterations") || index.contains("stalled"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for i in 0..2 {
        let out_dir = dir.path().join(format!("out{i}"));
        let config = write_config(
            dir.path(),
            &format!("run{i}.toml"),
            &quadratic_run_config(&out_dir),
        );
        let out = run_flow_cli(&["run", config.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        traces.push(std::fs::read(out_dir.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}
