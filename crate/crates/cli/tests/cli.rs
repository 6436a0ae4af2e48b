use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_serialcons"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run_config(dir: &Path, sub: &str, cfg: Value, out: &str) -> (Output, PathBuf) {
    let path = write_config(dir, &format!("{out}.json"), &cfg);
    let out = dir.join(out);
    let o = run(&[sub, "--config", path.to_str().unwrap()], &out);
    (o, out)
}

fn matrix(v: &Value) -> Vec<Vec<f64>> {
    serde_json::from_value(v.clone()).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synthesize_leader_chain_preset_is_local() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["synthesize", "--preset", "fig4"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let design = read_json(tmp.path().join("design.json"));
    assert_eq!(design["n"], 3);
    assert_eq!(design["coefficients"].as_array().unwrap().len(), 3);
    let locality = read_json(tmp.path().join("locality.json"));
    assert_eq!(locality["all_member"], true);
    // c = ‖6L‖_∞ = 24 on the leader chain, c' = C(3,2)·24³
    assert_eq!(locality["c"], 24.0);
    assert_eq!(locality["gain_bound"], 3.0 * 24.0f64.powi(3));
}

#[test]
fn synthesize_first_order_path_returns_laplacian() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({"command": "synthesize", "graph": {"family": "path", "n": 4}, "scales": [1.0]});
    let (o, out) = run_config(tmp.path(), "synthesize", cfg, "path");
    assert_eq!(code(&o), 0);
    let design = read_json(out.join("design.json"));
    let a0 = matrix(&design["coefficients"][0]);
    assert_eq!(a0, matrix(&design["laplacians"][0]));
    assert_eq!(a0[1], vec![-1.0, 2.0, -1.0, 0.0]);
}

#[test]
fn synthesize_complete_graph_square() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({"command": "synthesize", "graph": {"family": "complete", "n": 4}, "scales": [1.0, 1.0]});
    let (o, out) = run_config(tmp.path(), "synthesize", cfg, "complete");
    assert_eq!(code(&o), 0);
    let design = read_json(out.join("design.json"));
    // L = 4I − J, so L² = 4L: diagonal 12, off-diagonal −4
    let a0 = matrix(&design["coefficients"][0]);
    for (i, row) in a0.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, if i == j { 12.0 } else { -4.0 });
        }
    }
    assert_eq!(read_json(out.join("locality.json"))["all_member"], true);
}

#[test]
fn synthesize_reads_inline_graph() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "command": "synthesize",
        "graph": {"n": 3, "edges": [[0, 1, 1.0], [1, 2, 2.0]]},
        "scales": [1.0, 2.0],
    });
    let (o, out) = run_config(tmp.path(), "synthesize", cfg, "inline");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let l = matrix(&read_json(out.join("design.json"))["laplacians"][0]);
    assert_eq!(l, vec![vec![0.0, 0.0, 0.0], vec![-1.0, 1.0, 0.0], vec![0.0, -2.0, 2.0]]);
}

#[test]
fn sweep_leader_chain_preset() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["sweep", "--preset", "fig4", "--jobs", "2"], tmp.path());
    assert_eq!(code(&o), 0);
    let summary = read_json(tmp.path().join("summary.json"));
    // s³ + 6λs² + 4λs + 2λ is Hurwitz iff λ > 1/12; the chain's smallest
    // eigenvalue 2 − 2cos(π/(2N−1)) drops below that at N = 6
    assert_eq!(summary[0]["name"], "conventional");
    assert_eq!(summary[0]["critical_n"], 6);
    assert_eq!(summary[1]["name"], "serial");
    assert_eq!(summary[1]["critical_n"], Value::Null);
    let csv = fs::read_to_string(tmp.path().join("serial.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("N,max_re_excl_zeros,stable"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 28);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
    assert!(!tmp.path().join("serial.json").exists());
}

#[test]
fn sweep_full_spectra_writes_json() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["sweep", "--preset", "cycle-2nd-order", "--full-spectra"], tmp.path());
    assert_eq!(code(&o), 0);
    let summary = read_json(tmp.path().join("summary.json"));
    assert_eq!(summary[0]["critical_n"], 10);
    let full = read_json(tmp.path().join("conventional.json"));
    let first = &full["entries"][0];
    assert_eq!(first["n_agents"], 3);
    assert_eq!(first["eigenvalues"].as_array().unwrap().len(), 6);
    assert_eq!(read_json(tmp.path().join("config.json"))["full_spectra"], true);
}

#[test]
fn simulate_presets_separate_serial_from_conventional() {
    let tmp = TempDir::new().unwrap();
    let serial = tmp.path().join("serial");
    let o = run(&["simulate", "--preset", "serial-n13"], &serial);
    assert_eq!(code(&o), 0);
    let v = read_json(serial.join("verdict.json"));
    assert_eq!(v["verdict"]["achieved"], true);
    let trace = fs::read_to_string(serial.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,agent,k,value\n"));
    // 1801 time points × 13 agents × 3 derivatives
    assert_eq!(trace.lines().count(), 1 + 1801 * 13 * 3);
    let spreads = fs::read_to_string(serial.join("spreads.csv")).unwrap();
    assert!(spreads.starts_with("t,k,spread\n"));

    let conventional = tmp.path().join("conventional");
    let o = run(&["simulate", "--preset", "conventional-n13"], &conventional);
    assert_eq!(code(&o), 0);
    let v = read_json(conventional.join("verdict.json"));
    assert_eq!(v["verdict"]["achieved"], false);
    assert!(v["verdict"]["divergence"]["time"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_equal_states_settle_at_zero() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "command": "simulate",
        "graph": {"family": "directed_cycle", "n": 5},
        "rule": {"kind": "serial", "scales": [1.0, 1.0]},
        "horizon": 5.0,
        "dt": 0.5,
    });
    let (o, out) = run_config(tmp.path(), "simulate", cfg, "zero");
    assert_eq!(code(&o), 0);
    let v = read_json(out.join("verdict.json"));
    assert_eq!(v["verdict"]["achieved"], true);
    assert_eq!(v["verdict"]["settling_times"], json!([0.0, 0.0]));
}

#[test]
fn margin_additive_example_total() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["margin", "--preset", "additive-example"], tmp.path());
    assert_eq!(code(&o), 0);
    let m = read_json(tmp.path().join("margin.json"));
    assert!((m["total"].as_f64().unwrap() - 0.85).abs() < 1e-12);
    assert_eq!(m["satisfied"], true);
    assert_eq!(m["mode"], "additive");
}

#[test]
fn margin_all_zero_norms() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({"command": "margin", "mode": "multiplicative", "order": 3, "norms": [0.0, 0.0, 0.0, 0.0]});
    let (o, out) = run_config(tmp.path(), "margin", cfg, "zero");
    assert_eq!(code(&o), 0);
    let m = read_json(out.join("margin.json"));
    assert_eq!(m["total"], 0.0);
    assert_eq!(m["satisfied"], true);
}

#[test]
fn margin_lag_bank_preset_keeps_consensus() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["margin", "--preset", "lag-bank"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(tmp.path().join("margin.json"));
    assert!((m["total"].as_f64().unwrap() - 0.9).abs() < 1e-12);
    assert_eq!(m["satisfied"], true);
    let cl = read_json(tmp.path().join("closed_loop.json"));
    assert_eq!(cl["stable"], true);
    assert_eq!(cl["verdict"]["achieved"], true);
}

#[test]
fn margin_rejects_directed_laplacian() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "command": "margin",
        "mode": "additive",
        "order": 1,
        "blocks": [{"kind": "zero"}, {"kind": "zero"}],
        "closed_loop": {"graph": {"family": "directed_cycle", "n": 4}, "scales": [1.0]},
    });
    let (o, _) = run_config(tmp.path(), "margin", cfg, "directed");
    assert_eq!(code(&o), 3);
}

#[test]
fn monte_carlo_is_reproducible_across_jobs_and_reruns() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "command": "margin",
        "seed": 11,
        "mode": "additive",
        "order": 2,
        "closed_loop": {"graph": {"family": "path", "n": 5}, "scales": [1.0, 1.0]},
        "monte_carlo": {"samples": 8, "budget": 0.99},
    });
    let path = write_config(tmp.path(), "mc.json", &cfg);
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    assert_eq!(code(&run(&["margin", "--config", path.to_str().unwrap(), "--jobs", "1"], &one)), 0);
    assert_eq!(code(&run(&["margin", "--config", path.to_str().unwrap(), "--jobs", "4"], &four)), 0);
    assert_eq!(dir_bytes(&one), dir_bytes(&four));
    let csv = fs::read_to_string(one.join("robustness.csv")).unwrap();
    assert!(csv.starts_with("sample_id,total_margin,stable,min_settling_time\n"));
    assert_eq!(csv.lines().count(), 9);

    // the recorded config replays to identical bytes
    let replay = tmp.path().join("replay");
    let stored = one.join("config.json");
    assert_eq!(code(&run(&["margin", "--config", stored.to_str().unwrap()], &replay)), 0);
    assert_eq!(dir_bytes(&one), dir_bytes(&replay));

    let reseeded = tmp.path().join("reseeded");
    assert_eq!(code(&run(&["margin", "--config", path.to_str().unwrap(), "--seed", "12"], &reseeded)), 0);
    assert_eq!(read_json(reseeded.join("config.json"))["seed"], 12);
    assert_ne!(
        fs::read(reseeded.join("robustness.csv")).unwrap(),
        fs::read(one.join("robustness.csv")).unwrap()
    );
}

#[test]
fn simulate_random_state_depends_only_on_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = json!({
        "command": "simulate",
        "graph": {"family": "path", "n": 4},
        "rule": {"kind": "conventional", "gains": [1.0, 2.0]},
        "initial_state": {"kind": "uniform", "scale": 1.0},
        "horizon": 3.0,
        "dt": 0.1,
    });
    let path = write_config(tmp.path(), "sim.json", &cfg);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        assert_eq!(code(&run(&["simulate", "--config", path.to_str().unwrap(), "--seed", "5"], out)), 0);
    }
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn spectrum_presets_and_design_file() {
    let tmp = TempDir::new().unwrap();
    let serial = tmp.path().join("serial");
    assert_eq!(code(&run(&["spectrum", "--preset", "fig4-serial-n13"], &serial)), 0);
    let s = read_json(serial.join("spectrum.json"));
    assert_eq!(s["stable"], true);
    assert_eq!(s["n_structural_zeros"], 3);
    assert_eq!(s["eigenvalues"].as_array().unwrap().len(), 39);

    let conventional = tmp.path().join("conventional");
    assert_eq!(code(&run(&["spectrum", "--preset", "fig4-conventional-n13"], &conventional)), 0);
    assert_eq!(read_json(conventional.join("spectrum.json"))["stable"], false);

    let synth = tmp.path().join("synth");
    assert_eq!(code(&run(&["synthesize", "--preset", "fig4"], &synth)), 0);
    let cfg = json!({"command": "spectrum", "design_file": synth.join("design.json")});
    let (o, out) = run_config(tmp.path(), "spectrum", cfg, "from_file");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(out.join("spectrum.json"));
    assert_eq!(s["stable"], true);
    assert_eq!(s["eigenvalues"].as_array().unwrap().len(), 36);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["sweep"], &out)), 2);
    assert_eq!(code(&run(&["sweep", "--preset", "nope"], &out)), 2);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&run(&["sweep", "--config", bad.to_str().unwrap()], &out)), 2);

    let other = write_config(tmp.path(), "other.json", &json!({"command": "margin", "mode": "additive", "order": 1, "norms": [0.1, 0.1]}));
    assert_eq!(code(&run(&["sweep", "--config", other.to_str().unwrap()], &out)), 2);
    assert_eq!(
        code(&run(&["margin", "--config", other.to_str().unwrap(), "--preset", "lag-bank"], &out)),
        2
    );

    let cases = [
        ("unknown_family", "sweep", json!({"command": "sweep", "family": "ring", "n_min": 3, "n_max": 5,
            "rules": [{"name": "c", "rule": {"kind": "conventional", "gains": [1.0]}}]})),
        ("bad_gain", "sweep", json!({"command": "sweep", "family": "path", "n_min": 3, "n_max": 5,
            "rules": [{"name": "c", "rule": {"kind": "serial", "scales": [-1.0]}}]})),
        ("extra_field", "synthesize", json!({"command": "synthesize", "graph": {"family": "path", "n": 3},
            "scales": [1.0], "colour": "red"})),
        ("wrong_norm_count", "margin", json!({"command": "margin", "mode": "additive", "order": 2, "norms": [0.1]})),
        ("negative_weight", "synthesize", json!({"command": "synthesize", "graph": {"n": 2, "edges": [[0, 1, -1.0]]},
            "scales": [1.0]})),
    ];
    for (name, sub, cfg) in cases {
        let (o, _) = run_config(tmp.path(), sub, cfg, name);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn list_presets_prints_names() {
    let o = bin().args(["simulate", "--list-presets"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l == "serial-n13"));
}
