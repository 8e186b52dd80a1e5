use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lds_robust::baselines::cert_equiv_gain_bound;
use lds_robust::gain_certificate_log;
use lds_robust::Variant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lds-robust"))
}

fn run(cmd: &str, config: Option<&str>, dir: &Path, extra: &[&str]) -> Output {
    let mut c = bin();
    c.arg(cmd).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("config.toml");
        fs::write(&path, text).unwrap();
        c.arg("--config").arg(path);
    }
    c.args(extra).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join("out").join(name)
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out(dir, "report.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| header.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn zero_everything_gives_undefined_gain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
        [system]
        kind = "explicit"
        a = [[0.0]]
        b = [[1.0]]
        [controller]
        kind = "zero"
        [adversary]
        f_script = "zero"
    "#;
    let o = run("simulate", Some(cfg), dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(report(dir.path())["realized_gain"], "undefined");
    for name in ["trajectory.csv", "events.jsonl", "invariants.csv"] {
        assert!(out(dir.path(), name).exists(), "{name}");
    }
}

#[test]
fn scalar_impulse_matches_hand_decay() {
    // x' = 0.5 x + f with f_0 = 1: x_t = 2^{1−t}
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
        horizon = 8
        [system]
        kind = "explicit"
        a = [[0.5]]
        b = [[1.0]]
        [controller]
        kind = "zero"
        [adversary]
        f_script = "impulse:0:1"
    "#;
    let o = run("simulate", Some(cfg), dir.path(), &[]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&out(dir.path(), "trajectory.csv"));
    assert_eq!(rows.len(), 9);
    for (t, row) in rows.iter().enumerate().skip(1) {
        let x: f64 = row["x_0"].parse().unwrap();
        assert_eq!(x, 2f64.powi(1 - t as i32), "t={t}");
    }
    let gain = report(dir.path())["realized_gain"].as_f64().unwrap();
    let expect = ((1.0 - 0.25f64.powi(8)) / 0.75).sqrt();
    assert!((gain - expect).abs() < 1e-15);
}

#[test]
fn m_below_one_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", Some("[system]\nm = 0.5\n"), dir.path(), &[]);
    assert_eq!(code(&o), 2);
    let o = run("sweep", Some("[sweep]\nm = [2.0, 0.9]\n"), dir.path(), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_keys_and_bad_scripts_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run("simulate", Some("horizn = 5\n"), dir.path(), &[])), 2);
    assert_eq!(code(&run("simulate", Some("[adversary]\nf_script = \"wave:1\"\n"), dir.path(), &[])), 2);
}

#[test]
fn json_config_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"horizon": 5, "controller": {"kind": "zero"}}"#).unwrap();
    let o = bin().args(["simulate", "--out"]).arg(dir.path().join("out")).arg("--config").arg(&path).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(report(dir.path())["horizon"], 5);
}

#[test]
fn one_cell_sweep_equals_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
        seed = 7
        horizon = 150
        [system]
        d = 2
        m = 2.0
        l = 0.5
        [adversary]
        delta = "greedy_random"
        h = 0.05
        f_script = "random:40:3"
    "#;
    assert_eq!(code(&run("simulate", Some(cfg), dir.path(), &[])), 0);
    let rep = report(dir.path());
    assert_eq!(code(&run("sweep", Some(cfg), dir.path(), &[])), 0);
    let rows = csv_rows(&out(dir.path(), "results.csv"));
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    for key in ["realized_gain", "realized_gain_log", "peak_gain_log", "certificate_log"] {
        let v: f64 = row[key].parse().unwrap();
        assert_eq!(v, rep[key].as_f64().unwrap(), "{key}");
    }
    assert_eq!(row["epochs"], rep["epochs"].to_string());
    let n = rep["invariant_results"].as_array().unwrap().len();
    assert_eq!(row["invariants_passed"], n.to_string());
}

#[test]
fn seeds_give_distinct_repeatable_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
        horizon = 120
        [system]
        d = 2
        [adversary]
        delta = "greedy_aligned"
        h = 0.05
        f_script = "random:30:1"
        [sweep]
        seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]
    "#;
    assert_eq!(code(&run("sweep", Some(cfg), dir.path(), &["--jobs", "4"])), 0);
    let first = fs::read(out(dir.path(), "results.csv")).unwrap();
    assert_eq!(code(&run("sweep", Some(cfg), dir.path(), &["--jobs", "1"])), 0);
    assert_eq!(first, fs::read(out(dir.path(), "results.csv")).unwrap());
    let rows = csv_rows(&out(dir.path(), "results.csv"));
    assert_eq!(rows.len(), 10);
    let mut gains: Vec<&String> = rows.iter().map(|r| &r["realized_gain"]).collect();
    gains.sort();
    gains.dedup();
    assert_eq!(gains.len(), 10);
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "horizon = 100\n[system]\nd = 3\n[adversary]\ndelta = \"greedy_random\"\nh = 0.02\nf_script = \"chaser:1:100:2:4\"\n";
    let read_all = || {
        ["trajectory.csv", "events.jsonl", "report.json", "invariants.csv"].map(|n| fs::read(out(dir.path(), n)).unwrap())
    };
    assert_eq!(code(&run("simulate", Some(cfg), dir.path(), &["--seed", "11"])), 0);
    let a = read_all();
    assert_eq!(code(&run("simulate", Some(cfg), dir.path(), &["--seed", "11"])), 0);
    assert_eq!(a, read_all());
    assert_eq!(code(&run("simulate", Some(cfg), dir.path(), &["--seed", "12"])), 0);
    assert_ne!(a[0], read_all()[0]);
}

#[test]
fn cert_equiv_sweep_stays_under_its_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
        horizon = 2000
        [system]
        kind = "explicit"
        a = [[0.9]]
        b = [[1.0]]
        [controller]
        kind = "cert_equiv"
        [adversary]
        delta = "greedy_aligned"
        f_script = "random:100:1"
        [sweep]
        m = [1.0, 2.0, 4.0, 8.0, 16.0]
        h = [0.0, 0.25, 0.45]
        seeds = [1, 2]
    "#;
    assert_eq!(code(&run("sweep", Some(cfg), dir.path(), &[])), 0);
    let rows = csv_rows(&out(dir.path(), "results.csv"));
    assert_eq!(rows.len(), 30);
    for row in rows {
        let (m, h): (f64, f64) = (row["m"].parse().unwrap(), row["h"].parse().unwrap());
        let gain: f64 = row["realized_gain"].parse().unwrap();
        let bound = cert_equiv_gain_bound(m, h);
        assert!((bound - (64.0 * m * m - 8.0 * h).sqrt() / (1.0 - 2.0 * h).powf(1.5)).abs() < 1e-12 * bound);
        assert!(gain <= bound, "M={m} h={h}: {gain} > {bound}");
        assert_eq!(row["invariants_failed"], "0");
    }
}

#[test]
fn sweep_exit_code_flags_invariant_failures() {
    // the declared disturbance bound is far below the real one, so the state bound breaks
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
        horizon = 50
        [system]
        kind = "explicit"
        a = [[1.5]]
        b = [[1.0]]
        [controller]
        kind = "cusumano_poolla"
        kappa = 1.0
        f_bound = 1e-30
        [adversary]
        f_script = "impulse:0:1"
    "#;
    let o = run("sweep", Some(cfg), dir.path(), &[]);
    let rows = csv_rows(&out(dir.path(), "results.csv"));
    let failed: usize = rows.iter().map(|r| r["invariants_failed"].parse::<usize>().unwrap_or(0)).sum();
    assert!(failed > 0);
    assert_eq!(code(&o), 1);
}

#[test]
fn lowerbound_refuses_bad_mu_and_gamma() {
    let dir = tempfile::tempdir().unwrap();
    // μ must lie in (0, 1/(3γ₀²)) = (0, 1/12) for γ₀ = 2
    let o = run("lowerbound", Some("[lowerbound]\ngamma0 = 2.0\nmu = 0.1\n"), dir.path(), &[]);
    assert_eq!(code(&o), 2);
    let o = run("lowerbound", Some("[lowerbound]\nmu = 0.0\n"), dir.path(), &[]);
    assert_eq!(code(&o), 2);
    let o = run("lowerbound", Some("[lowerbound]\ngamma0 = 0.5\n"), dir.path(), &[]);
    assert_eq!(code(&o), 2);
    let o = run("lowerbound", Some("[lowerbound]\nm = 0.5\n"), dir.path(), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn lowerbound_writes_game_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "horizon = 400\n[lowerbound]\na0 = 4.0\nm = 4.0\ngamma0 = 1.0\n";
    assert_eq!(code(&run("lowerbound", Some(cfg), dir.path(), &[])), 0);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out(dir.path(), "lowerbound.json")).unwrap()).unwrap();
    assert!(s["trap_time"].as_u64().is_some());
    assert!(s["max_normalization_error"].as_f64().unwrap() < 1e-9);
    assert!(s["realized_gain"].as_f64().unwrap() > 0.0);
    let game = csv_rows(&out(dir.path(), "game.csv"));
    assert!(!game.is_empty());
    assert!(game.iter().skip(1).all(|r| r["z"].parse::<f64>().unwrap().abs() >= 2.0 * (1.0 - 1e-9)));
    assert_eq!(csv_rows(&out(dir.path(), "trajectory.csv")).len(), 401);
}

#[test]
fn certificates_match_library_and_hand_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[certificates]\nm = [1.0, 2.0, 4.0, 8.0]\nl = [0.5, 1.0]\nd = [1, 2, 3]\n";
    assert_eq!(code(&run("certificates", Some(cfg), dir.path(), &[])), 0);
    let rows = csv_rows(&out(dir.path(), "certificates.csv"));
    assert_eq!(rows.len(), 4 * 2 * 3 * 2);
    for r in &rows {
        let variant = if r["variant"] == "standard_basis" { Variant::StandardBasis } else { Variant::EpsNetHalf };
        let (d, m, l) = (r["d"].parse().unwrap(), r["m"].parse().unwrap(), r["l"].parse().unwrap());
        let lib = gain_certificate_log(m, l, d, variant).unwrap();
        assert_eq!(r["gain_bound_log"].parse::<f64>().unwrap(), lib);
    }
    // monotone in M inside each (d, L, variant) group
    for d in ["1", "2", "3"] {
        for variant in ["standard_basis", "eps_net"] {
            for l in ["5.0000000000000000e-1", "1.0000000000000000e0"] {
                let g: Vec<f64> = rows
                    .iter()
                    .filter(|r| r["d"] == d && r["variant"] == variant && r["l"] == l)
                    .map(|r| r["gain_bound_log"].parse().unwrap())
                    .collect();
                assert_eq!(g.len(), 4);
                assert!(g.windows(2).all(|w| w[0] < w[1]), "{d} {variant} {l}: {g:?}");
            }
        }
    }
    // d = 1, M = 2, L = 1: ε = 1/300, ln α = 14 ln 4 + 8 ln 2 = 36 ln 2, bound = ln 40 + 72 ln 2
    let r = rows
        .iter()
        .find(|r| r["d"] == "1" && r["m"] == "2.0000000000000000e0" && r["l"] == "1.0000000000000000e0" && r["variant"] == "standard_basis")
        .unwrap();
    let ln2 = 2f64.ln();
    assert!((r["eps"].parse::<f64>().unwrap() - 1.0 / 300.0).abs() < 1e-18);
    assert!((r["alpha_log"].parse::<f64>().unwrap() - 36.0 * ln2).abs() < 1e-12);
    assert!((r["gain_bound_log"].parse::<f64>().unwrap() - (40f64.ln() + 72.0 * ln2)).abs() < 1e-12);
}

#[test]
fn certificates_mark_invalid_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[certificates]\nm = [2.0]\nl = [1.0]\nd = [7]\n";
    assert_eq!(code(&run("certificates", Some(cfg), dir.path(), &[])), 0);
    let rows = csv_rows(&out(dir.path(), "certificates.csv"));
    let net = rows.iter().find(|r| r["variant"] == "eps_net").unwrap();
    assert_eq!(net["gain_bound_log"], "na");
    let basis = rows.iter().find(|r| r["variant"] == "standard_basis").unwrap();
    assert_ne!(basis["gain_bound_log"], "na");
}

#[test]
fn numeric_failure_exits_three_with_partial_outputs() {
    // x_t = 1e300^t leaves the floating range while the linear controller keeps pushing
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
        horizon = 10
        [system]
        kind = "explicit"
        a = [[0.0]]
        b = [[1.0]]
        m = 1.0
        [controller]
        kind = "linear"
        k = [[-1e300]]
        [adversary]
        f_script = "impulse:0:1"
    "#;
    let o = run("simulate", Some(cfg), dir.path(), &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let rep = report(dir.path());
    assert!(rep["error"].is_string());
    assert!(rep["failed_at"].as_u64().is_some());
}
