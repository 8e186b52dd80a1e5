use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lds_robust::adversaries::{default_mu, run_lower_bound};
use lds_robust::baselines::cp_gain_bound_log;
use lds_robust::metrics::{gain_report, l2_gain_log, peak_prefix_gain_log};
use lds_robust::*;
use rayon::prelude::*;
use serde::Serialize;

use crate::build::{build_controller, build_delta, build_disturbance, build_system};
use crate::config::{ControllerKind, DeltaKind, ExperimentConfig};
use crate::CliError;

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.16e}")
    }
}

fn gain_cell(g: Gain) -> String {
    match g {
        Gain::Undefined => "undefined".into(),
        Gain::Defined(v) if !v.is_finite() => "overflow".into(),
        Gain::Defined(v) => num(v),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| io_err(&path, e))
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<File>, CliError> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(&dir.join(name), e))
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Serialize)]
struct EventLine<'a> {
    t: usize,
    event: &'a str,
    q_old: Option<f64>,
    q_new: Option<f64>,
    ln_q_old: Option<f64>,
    ln_q_new: Option<f64>,
    phase: &'a str,
    reason: Option<&'a str>,
}

/// Result of one rollout with everything needed for reporting.
pub struct CellRun {
    pub trajectory: Trajectory,
    pub report: GainReport,
    pub numeric_failure: bool,
}

fn failed_at(e: &RolloutError) -> usize {
    match e {
        RolloutError::Controller { t, .. } | RolloutError::NumericOverflow { t } | RolloutError::Dimension { t, .. } => *t,
    }
}

pub fn run_cell(cfg: &ExperimentConfig) -> Result<CellRun, CliError> {
    let sys = build_system(cfg)?;
    let mut f = build_disturbance(cfg, &sys)?;
    let mut ctrl = build_controller(cfg, &sys, f.known_energy)?;
    let (mut delta, h) = build_delta(cfg, &sys)?;
    let outcome = rollout(&sys, ctrl.as_dyn(), delta.as_mut(), f.source.as_mut(), cfg.horizon);
    let (trajectory, failure) = match outcome {
        Ok(t) => (t, None),
        Err(fail) => (fail.partial, Some(fail.error)),
    };
    let invariants = if failure.is_none() { ctrl.invariants(&trajectory, &sys, h) } else { Vec::new() };
    let mut report = gain_report(&trajectory, ctrl.certificate_log(&sys, h), ctrl.epochs(), ctrl.switches(), invariants);
    if let Some(e) = &failure {
        report.error = Some(e.to_string());
        report.failed_at = Some(failed_at(e));
    }
    Ok(CellRun { trajectory, report, numeric_failure: failure.is_some() })
}

fn write_events(dir: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let path = dir.join("events.jsonl");
    let mut w = create(dir, "events.jsonl")?;
    for e in &traj.events {
        let line = EventLine {
            t: e.t,
            event: &e.event,
            q_old: finite_or_null(e.ln_q_old.exp()).filter(|_| e.ln_q_old.is_finite()),
            q_new: finite_or_null(e.ln_q_new.exp()).filter(|_| e.ln_q_new.is_finite()),
            ln_q_old: finite_or_null(e.ln_q_old),
            ln_q_new: finite_or_null(e.ln_q_new),
            phase: &e.phase,
            reason: e.reason.as_deref(),
        };
        let text = serde_json::to_string(&line).map_err(|e| CliError::Io(e.to_string()))?;
        writeln!(w, "{text}").map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<i32, CliError> {
    let dir = out_dir(cfg)?;
    let run = run_cell(cfg)?;
    let traj_path = dir.join("trajectory.csv");
    let mut w = create(&dir, "trajectory.csv")?;
    run.trajectory.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&traj_path, e))?;
    write_events(&dir, &run.trajectory)?;
    write_json(&dir, "report.json", &run.report)?;
    let mut inv = csv_writer(&dir, "invariants.csv")?;
    inv.write_record(["name", "pass", "margin"]).map_err(|e| CliError::Io(e.to_string()))?;
    for r in &run.report.invariant_results {
        inv.write_record([r.name.clone(), r.pass.to_string(), num(r.margin)]).map_err(|e| CliError::Io(e.to_string()))?;
    }
    inv.flush().map_err(|e| CliError::Io(e.to_string()))?;
    if run.numeric_failure {
        eprintln!("numeric failure: {}", run.report.error.as_deref().unwrap_or("unknown"));
        return Ok(3);
    }
    if !run.report.invariants_pass() {
        for r in run.report.invariant_results.iter().filter(|r| !r.pass) {
            eprintln!("invariant failed: {} (margin {})", r.name, num(r.margin));
        }
        return Ok(1);
    }
    Ok(0)
}

/// The cross product of the sweep axes, in row-major order with seed innermost.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let s = &cfg.sweep;
    fn axis<T: Clone>(v: &[T], base: T) -> Vec<T> {
        if v.is_empty() {
            vec![base]
        } else {
            v.to_vec()
        }
    }
    let seeds = if s.seeds.is_empty() {
        (0..cfg.repetitions.max(1) as u64).map(|i| cfg.seed.wrapping_add(i)).collect()
    } else {
        s.seeds.clone()
    };
    let mut cells = Vec::new();
    for d in axis(&s.d, cfg.system.d) {
        for m in axis(&s.m, cfg.system.m) {
            for l in axis(&s.l, cfg.system.l) {
                for h in axis(&s.h, cfg.adversary.h) {
                    for controller in axis(&s.controller, cfg.controller.kind) {
                        for delta in axis(&s.delta, cfg.adversary.delta) {
                            for f_script in axis(&s.f_script, cfg.adversary.f_script.clone()) {
                                for &seed in &seeds {
                                    let mut c = cfg.clone();
                                    c.system.d = d;
                                    c.system.m = m;
                                    c.system.l = l;
                                    c.adversary.h = h;
                                    c.controller.kind = controller;
                                    c.adversary.delta = delta;
                                    c.adversary.f_script = f_script.clone();
                                    c.seed = seed;
                                    cells.push(c);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}

fn kind_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

enum CellStatus {
    Ok,
    Invariant,
    Numeric,
    Invalid,
}

pub const SWEEP_HEADER: [&str; 20] = [
    "cell",
    "seed",
    "d",
    "m",
    "l",
    "h",
    "controller",
    "delta",
    "f_script",
    "realized_gain",
    "realized_gain_log",
    "peak_gain_log",
    "certificate_log",
    "epochs",
    "switches",
    "invariants_passed",
    "invariants_failed",
    "cost_lqr_log",
    "failed_at",
    "error",
];

fn sweep_row(i: usize, c: &ExperimentConfig) -> (Vec<String>, CellStatus) {
    let mut row = vec![
        i.to_string(),
        c.seed.to_string(),
        c.system.d.to_string(),
        num(c.system.m),
        num(c.system.l),
        num(c.adversary.h),
        kind_name(&c.controller.kind),
        kind_name(&c.adversary.delta),
        c.adversary.f_script.clone(),
    ];
    match run_cell(c) {
        Ok(run) => {
            let r = &run.report;
            let passed = r.invariant_results.iter().filter(|x| x.pass).count();
            let failed = r.invariant_results.len() - passed;
            row.extend([
                gain_cell(r.realized_gain),
                gain_cell(r.realized_gain_log),
                gain_cell(r.peak_gain_log),
                r.certificate_log.map_or("na".into(), num),
                r.epochs.to_string(),
                r.switches.to_string(),
                passed.to_string(),
                failed.to_string(),
                num(r.cost_lqr_log),
                r.failed_at.map_or(String::new(), |t| t.to_string()),
                r.error.clone().unwrap_or_default(),
            ]);
            let status = if failed > 0 {
                CellStatus::Invariant
            } else if run.numeric_failure {
                CellStatus::Numeric
            } else {
                CellStatus::Ok
            };
            (row, status)
        }
        Err(e) => {
            row.extend(["na", "na", "na", "na", "0", "0", "0", "0", "na", ""].map(String::from));
            row.push(e.to_string());
            (row, CellStatus::Invalid)
        }
    }
}

pub fn sweep(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<i32, CliError> {
    let dir = out_dir(cfg)?;
    let cells = sweep_cells(cfg);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    // rows come back in cell order whatever the scheduling
    let rows: Vec<_> = pool.install(|| cells.par_iter().enumerate().map(|(i, c)| sweep_row(i, c)).collect());
    let mut w = csv_writer(&dir, "results.csv")?;
    w.write_record(SWEEP_HEADER).map_err(|e| CliError::Io(e.to_string()))?;
    let (mut invariant, mut numeric, mut invalid) = (false, false, false);
    for (row, status) in &rows {
        w.write_record(row).map_err(|e| CliError::Io(e.to_string()))?;
        match status {
            CellStatus::Ok => {}
            CellStatus::Invariant => invariant = true,
            CellStatus::Numeric => numeric = true,
            CellStatus::Invalid => invalid = true,
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    eprintln!("{} cells written to {}", rows.len(), dir.join("results.csv").display());
    Ok(if invariant {
        1
    } else if numeric {
        3
    } else if invalid {
        2
    } else {
        0
    })
}

#[derive(Serialize)]
struct LowerBoundSummary {
    a: f64,
    a0: f64,
    m: f64,
    gamma0: f64,
    mu: f64,
    h: f64,
    horizon: usize,
    controller: String,
    trap_time: Option<usize>,
    refuted_gamma: f64,
    realized_gain: Gain,
    realized_gain_log: Gain,
    peak_gain_log: Gain,
    max_normalization_error: f64,
    error: Option<String>,
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn lowerbound(cfg: &ExperimentConfig) -> Result<i32, CliError> {
    let lb = &cfg.lowerbound;
    if !(lb.m >= 1.0) {
        return Err(CliError::Config(format!("M must be >= 1, got {}", lb.m)));
    }
    if !(lb.h >= 0.0 && lb.h < 0.5) {
        return Err(CliError::Config(format!("h must lie in [0, 1/2), got {}", lb.h)));
    }
    let a = lb.a.unwrap_or(lb.a0);
    let mu = lb.mu.unwrap_or_else(|| default_mu(lb.gamma0));
    let source = LbGameSource::new(a, lb.a0, lb.gamma0, mu).map_err(|e| CliError::Config(e.to_string()))?;
    let mut ctrl: Box<dyn Controller> = match lb.controller {
        ControllerKind::CertEquiv => Box::new(CertEquivController::new(lb.m)),
        ControllerKind::Linear => Box::new(LinearFeedback { k: DMatrix::from_element(1, 1, lb.k) }),
        ControllerKind::Zero => Box::new(ZeroController { p: 1 }),
        ControllerKind::L2Gain => Box::new(
            L2GainController::new(&L2GainConfig::new(lb.m, cfg.system.l, 1)).map_err(|e| CliError::Config(e.to_string()))?,
        ),
        other => return Err(CliError::Config(format!("lowerbound does not support the {} controller", kind_name(&other)))),
    };
    let policy = if lb.h > 0.0 { DeltaPolicy::GreedyAligned } else { DeltaPolicy::Zero };
    let mut delta = DeltaBudget::new(lb.h, policy);
    let dir = out_dir(cfg)?;
    let (run, error) = match run_lower_bound(source, lb.m, cfg.horizon, ctrl.as_mut(), &mut delta) {
        Ok(run) => (Some(run), None),
        Err(fail) => {
            let path = dir.join("trajectory.csv");
            let mut w = create(&dir, "trajectory.csv")?;
            fail.partial.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
            (None, Some(fail.error.to_string()))
        }
    };
    let Some(run) = run else {
        eprintln!("numeric failure: {}", error.as_deref().unwrap_or_default());
        let summary = LowerBoundSummary {
            a,
            a0: lb.a0,
            m: lb.m,
            gamma0: lb.gamma0,
            mu,
            h: lb.h,
            horizon: cfg.horizon,
            controller: kind_name(&lb.controller),
            trap_time: None,
            refuted_gamma: f64::NAN,
            realized_gain: Gain::Undefined,
            realized_gain_log: Gain::Undefined,
            peak_gain_log: Gain::Undefined,
            max_normalization_error: f64::NAN,
            error,
        };
        write_json(&dir, "lowerbound.json", &summary)?;
        return Ok(3);
    };

    let mut game = csv_writer(&dir, "game.csv")?;
    let io = |e: csv::Error| CliError::Io(e.to_string());
    game.write_record([
        "t", "z", "beta", "theta", "z_recursive", "beta_recursive", "theta_recursive", "delta", "nu", "in_trap",
    ])
    .map_err(io)?;
    let mut max_err: f64 = 0.0;
    for e in &run.log {
        let (x, y) = (e.direct, e.recursive);
        max_err = max_err.max(rel_gap(x.z, y.z)).max(rel_gap(x.beta, y.beta)).max(rel_gap(x.theta, y.theta));
        game.write_record([
            e.t.to_string(),
            num(x.z),
            num(x.beta),
            num(x.theta),
            num(y.z),
            num(y.beta),
            num(y.theta),
            num(e.delta),
            num(e.nu),
            e.in_trap.to_string(),
        ])
        .map_err(io)?;
    }
    game.flush().map_err(|e| CliError::Io(e.to_string()))?;
    let path = dir.join("trajectory.csv");
    let mut w = create(&dir, "trajectory.csv")?;
    run.trajectory.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
    let summary = LowerBoundSummary {
        a,
        a0: lb.a0,
        m: lb.m,
        gamma0: lb.gamma0,
        mu,
        h: lb.h,
        horizon: cfg.horizon,
        controller: kind_name(&lb.controller),
        trap_time: run.trap_time,
        refuted_gamma: run.refuted_gamma,
        realized_gain: l2_gain(&run.trajectory).into(),
        realized_gain_log: l2_gain_log(&run.trajectory).into(),
        peak_gain_log: peak_prefix_gain_log(&run.trajectory).into(),
        max_normalization_error: max_err,
        error: None,
    };
    write_json(&dir, "lowerbound.json", &summary)?;
    Ok(0)
}

pub const CERTIFICATE_HEADER: [&str; 8] = ["d", "m", "l", "variant", "eps", "alpha_log", "gain_bound_log", "cp_bound_log"];

pub fn certificates(cfg: &ExperimentConfig) -> Result<i32, CliError> {
    let c = &cfg.certificates;
    let dir = out_dir(cfg)?;
    let mut w = csv_writer(&dir, "certificates.csv")?;
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(CERTIFICATE_HEADER).map_err(io)?;
    for &d in &c.d {
        for &l in &c.l {
            for &m in &c.m {
                for variant in [Variant::StandardBasis, Variant::EpsNetHalf] {
                    let (eps, alpha) = match default_parameters(m, l, d, variant) {
                        Ok(p) => (num(p.eps), num(p.alpha_log)),
                        Err(_) => ("na".into(), "na".into()),
                    };
                    let gain = gain_certificate_log(m, l, d, variant).map_or("na".into(), num);
                    let cp = if m >= 1.0 && c.kappa >= 1.0 { num(cp_gain_bound_log(c.kappa, m, d, d)) } else { "na".into() };
                    w.write_record([d.to_string(), num(m), num(l), kind_name(&variant), eps, alpha, gain, cp])
                        .map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(0)
}

/// Checks shared by every subcommand before any work starts.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let bad = |msg: String| Err(CliError::Config(msg));
    if !(cfg.system.m >= 1.0) {
        return bad(format!("M must be >= 1, got {}", cfg.system.m));
    }
    if let Some(m) = cfg.sweep.m.iter().find(|m| !(**m >= 1.0)) {
        return bad(format!("sweep M must be >= 1, got {m}"));
    }
    if cfg.adversary.delta == DeltaKind::MatrixShift && cfg.adversary.matrix.is_none() {
        return bad("matrix_shift needs adversary.matrix".into());
    }
    Ok(())
}
