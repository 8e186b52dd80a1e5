//! Turns a config into a plant, controller, misspecification and disturbance.

use std::path::Path;

use lds_robust::adversaries::{
    default_mu, disturbance_from_file, impulse, random_energy_script, unstabilizable_plant, EpochChaser,
    UnstabilizableDelta,
};
use lds_robust::baselines::{cert_equiv_gain_bound, cp_gain_bound_log, make_strongly_stabilizable_instance, CandidateOrder};
use lds_robust::metrics::{adaptive_invariants, cert_equiv_invariants, cp_invariants, oracle_controller};
use lds_robust::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ControllerKind, DeltaKind, ExperimentConfig, OrderKind, SystemKind};
use crate::CliError;

/// Independent per-component streams from one seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, component: u64) -> u64 {
    let mut z = seed ^ component.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SYSTEM_STREAM: u64 = 1;
const DELTA_STREAM: u64 = 2;
const F_STREAM: u64 = 3;
const ORDER_STREAM: u64 = 4;

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if n == 0 || c == 0 || rows.iter().any(|r| r.len() != c) {
        return Err(CliError::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, c, |i, j| rows[i][j]))
}

pub fn build_system(cfg: &ExperimentConfig) -> Result<SystemInstance, CliError> {
    let s = &cfg.system;
    let seed = derive_seed(cfg.seed, SYSTEM_STREAM);
    match s.kind {
        SystemKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            SystemInstance::random(s.d, s.m, s.l, &mut rng).map_err(cfg_err)
        }
        SystemKind::Explicit => {
            let a = matrix(s.a.as_deref().ok_or_else(|| cfg_err("explicit system needs a"))?, "a")?;
            let b = matrix(s.b.as_deref().ok_or_else(|| cfg_err("explicit system needs b"))?, "b")?;
            let sys = SystemInstance::new(a, b, s.m, s.l).map_err(cfg_err)?;
            let report = validate_system(&sys);
            if !report.ok() {
                return Err(CliError::Config(format!("system violates its bounds: {}", report.violations().join("; "))));
            }
            Ok(sys)
        }
        SystemKind::StronglyStabilizable => {
            make_strongly_stabilizable_instance(s.kappa, s.d, s.p, s.b_norm, seed).map(|(sys, _)| sys).map_err(cfg_err)
        }
        SystemKind::Unstabilizable => {
            if s.m < 1.0 {
                return Err(cfg_err("M must be >= 1"));
            }
            let (a, b) = unstabilizable_plant(s.eps);
            SystemInstance::new(a, b, s.m.max(2.0 + s.eps), s.l).map_err(cfg_err)
        }
    }
}

/// Concrete controller, kept so the matching invariants can be evaluated afterwards.
pub enum BuiltController {
    L2(L2GainController, Variant),
    CertEquiv(CertEquivController),
    Cp(CusumanoPoolla, f64),
    Fixed(Box<dyn Controller>),
}

impl BuiltController {
    pub fn as_dyn(&mut self) -> &mut dyn Controller {
        match self {
            BuiltController::L2(c, _) => c,
            BuiltController::CertEquiv(c) => c,
            BuiltController::Cp(c, _) => c,
            BuiltController::Fixed(c) => c.as_mut(),
        }
    }

    pub fn certificate_log(&self, sys: &SystemInstance, h: f64) -> Option<f64> {
        match self {
            BuiltController::L2(_, v) => gain_certificate_log(sys.m, sys.l, sys.dim(), *v).ok(),
            BuiltController::CertEquiv(_) if h < 0.5 && sys.m >= 0.25 => Some(cert_equiv_gain_bound(sys.m, h).ln()),
            BuiltController::Cp(c, _) => {
                let st = &c.state;
                Some(cp_gain_bound_log(st.kappa, st.m, st.grid.d, st.grid.p))
            }
            _ => None,
        }
    }

    pub fn epochs(&self) -> usize {
        match self {
            BuiltController::L2(c, _) => c.state.epoch,
            _ => 0,
        }
    }

    pub fn switches(&self) -> u64 {
        match self {
            BuiltController::Cp(c, _) => c.state.switches,
            _ => 0,
        }
    }

    pub fn invariants(&self, traj: &Trajectory, sys: &SystemInstance, h: f64) -> Vec<InvariantResult> {
        match self {
            BuiltController::L2(c, _) => adaptive_invariants(traj, c, sys, h),
            BuiltController::CertEquiv(_) => cert_equiv_invariants(traj, sys.m, h),
            BuiltController::Cp(c, f_bound) => cp_invariants(traj, c, h, *f_bound),
            BuiltController::Fixed(_) => {
                let rob = robustness_check(traj, h);
                vec![InvariantResult::new("robustness_budget", rob.pass(), rob.min_margin)]
            }
        }
    }
}

/// `known_energy` is `‖f‖` when the disturbance is scripted up front.
pub fn build_controller(
    cfg: &ExperimentConfig,
    sys: &SystemInstance,
    known_energy: Option<f64>,
) -> Result<BuiltController, CliError> {
    let c = &cfg.controller;
    let (d, p) = (sys.dim(), sys.inputs());
    Ok(match c.kind {
        ControllerKind::L2Gain => {
            let mut lc = L2GainConfig::new(sys.m, sys.l, d);
            lc.variant = c.variant;
            lc.initial_budget = c.initial_budget;
            if c.known_budget {
                let q = known_energy.ok_or_else(|| cfg_err("known_budget needs a scripted f"))?;
                if q > 0.0 {
                    lc.initial_budget = Some(q);
                }
            }
            if p != d {
                return Err(cfg_err("the adaptive controller needs a square B"));
            }
            BuiltController::L2(L2GainController::new(&lc).map_err(cfg_err)?, c.variant)
        }
        ControllerKind::CertEquiv => {
            if d != 1 || p != 1 || sys.b[(0, 0)] != 1.0 {
                return Err(cfg_err("cert_equiv needs a scalar plant with b = 1 (use an explicit system)"));
            }
            BuiltController::CertEquiv(CertEquivController::new(sys.m))
        }
        ControllerKind::CusumanoPoolla => {
            let f_bound = c
                .f_bound
                .or(known_energy.filter(|q| *q > 0.0))
                .ok_or_else(|| cfg_err("cusumano_poolla needs f_bound or a scripted non-zero f"))?;
            let order = match c.order {
                OrderKind::Lexicographic => CandidateOrder::Lexicographic,
                OrderKind::Scrambled => CandidateOrder::Scrambled(derive_seed(cfg.seed, ORDER_STREAM)),
            };
            let cp = CpConfig { kappa: c.kappa, m: sys.m, f_bound, d, p, order };
            BuiltController::Cp(CusumanoPoolla::new(&cp).map_err(cfg_err)?, f_bound)
        }
        ControllerKind::Zero => BuiltController::Fixed(Box::new(ZeroController { p })),
        ControllerKind::Linear => {
            let k = matrix(c.k.as_deref().ok_or_else(|| cfg_err("linear controller needs k"))?, "k")?;
            if k.shape() != (p, d) {
                return Err(CliError::Config(format!("k must be {p}x{d}")));
            }
            BuiltController::Fixed(Box::new(LinearFeedback { k }))
        }
        ControllerKind::Oracle => BuiltController::Fixed(Box::new(
            oracle_controller(sys).ok_or_else(|| cfg_err("oracle controller needs an invertible B"))?,
        )),
    })
}

/// Returns the operator and the budget `h` its output is checked against.
pub fn build_delta(cfg: &ExperimentConfig, sys: &SystemInstance) -> Result<(Box<dyn Misspecification>, f64), CliError> {
    let a = &cfg.adversary;
    if !(a.h >= 0.0 && a.h.is_finite()) {
        return Err(cfg_err("h must be finite and >= 0"));
    }
    let policy = match a.delta {
        DeltaKind::Zero => DeltaPolicy::Zero,
        DeltaKind::GreedyAligned => DeltaPolicy::GreedyAligned,
        DeltaKind::GreedyAntiK => DeltaPolicy::GreedyAntiK,
        DeltaKind::GreedyRandom => DeltaPolicy::GreedyRandom(derive_seed(cfg.seed, DELTA_STREAM)),
        DeltaKind::MatrixShift => {
            let e = matrix(a.matrix.as_deref().ok_or_else(|| cfg_err("matrix_shift needs matrix"))?, "matrix")?;
            if e.shape() != (sys.dim(), sys.dim()) {
                return Err(cfg_err("matrix_shift matrix must be d x d"));
            }
            DeltaPolicy::MatrixShift(e)
        }
        DeltaKind::Unstabilizable => {
            if sys.dim() != 2 {
                return Err(cfg_err("the unstabilizable operator needs d = 2"));
            }
            // ‖w‖ ≤ ε‖x‖ pointwise, so ε is the budget it respects
            let eps = cfg.system.eps;
            return Ok((Box::new(UnstabilizableDelta { eps }), eps));
        }
    };
    Ok((Box::new(DeltaBudget::new(a.h, policy)), a.h))
}

pub struct BuiltDisturbance {
    pub source: Box<dyn Disturbance>,
    /// `‖f‖` of a script fixed in advance.
    pub known_energy: Option<f64>,
}

fn scripted(s: ScriptedDisturbance) -> BuiltDisturbance {
    let q = s.values.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    BuiltDisturbance { source: Box::new(s), known_energy: Some(q) }
}

fn field<T: std::str::FromStr>(s: &str, src: &str) -> Result<T, CliError> {
    s.trim().parse().map_err(|_| CliError::Config(format!("bad field '{s}' in f_script '{src}'")))
}

pub fn build_disturbance(cfg: &ExperimentConfig, sys: &SystemInstance) -> Result<BuiltDisturbance, CliError> {
    let src = cfg.adversary.f_script.trim();
    let d = sys.dim();
    let seed = derive_seed(cfg.seed, F_STREAM);
    let parts: Vec<&str> = src.split(':').collect();
    match parts.as_slice() {
        ["random", len, energy] => {
            let energy: f64 = field(energy, src)?;
            if !(energy >= 0.0 && energy.is_finite()) {
                return Err(cfg_err("random f_script energy must be finite and >= 0"));
            }
            return Ok(scripted(random_energy_script(d, field(len, src)?, energy, seed)));
        }
        ["chaser", initial, factor, delay, count] => {
            let chaser = EpochChaser::new(field(initial, src)?, field(factor, src)?, field(delay, src)?, field(count, src)?, seed);
            return Ok(BuiltDisturbance { source: Box::new(chaser), known_energy: None });
        }
        _ => {}
    }
    let script: FScript = src.parse().map_err(cfg_err)?;
    Ok(match script {
        FScript::Zero => scripted(ScriptedDisturbance { values: Vec::new() }),
        FScript::Impulse { t, magnitude } => scripted(impulse(d, t, magnitude)),
        FScript::File(path) => scripted(disturbance_from_file(Path::new(&path), d).map_err(cfg_err)?),
        FScript::LbGame { a0, gamma0 } => {
            if d != 1 || sys.inputs() != 1 || sys.b[(0, 0)] != 1.0 {
                return Err(cfg_err("lb_game needs a scalar plant with b = 1"));
            }
            let source = LbGameSource::new(sys.a[(0, 0)], a0, gamma0, default_mu(gamma0)).map_err(cfg_err)?;
            BuiltDisturbance { source: Box::new(source), known_energy: None }
        }
    })
}
