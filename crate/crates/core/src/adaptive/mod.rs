//! Budget-doubling ℓ₂-gain controller with active exploration.
//!
//! The controller keeps a disturbance budget `q`. While `‖x_{1:t}‖ ≤ α q` it plays
//! `u = −K x`; otherwise it raises `q` to the current state energy and
//! re-identifies the plant: first `B` by `d` scaled actuation probes, then `A`
//! by alternating scaled probes through `B̂⁻¹` with zero inputs. Any failed
//! check during identification restarts it with the current energy as budget.

mod phi;

pub use phi::{minimize_phi, phi_lower_bound, phi_value, PhiSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::nets::sphere_net;
use crate::error::{ControlError, LdsError};
use crate::lds::{Controller, ControllerEvent, Observation};
use crate::linalg::{ldexp, sigma_min, solve, spectral_norm};

const LN4: f64 = 1.386_294_361_119_890_6;

/// Largest dimension for the sphere-net exploration variant.
pub const EPS_NET_MAX_DIM: usize = 6;

/// Default cap on the number of grid candidates scanned when building a sphere net.
pub const DEFAULT_NET_CAP: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    StandardBasis,
    #[serde(rename = "eps_net")]
    EpsNetHalf,
}

/// Directions probed while identifying `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSet {
    pub kind: Variant,
    pub vectors: Vec<DVector<f64>>,
}

impl ExplorationSet {
    pub fn standard_basis(d: usize) -> Self {
        let vectors = (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                e
            })
            .collect();
        Self { kind: Variant::StandardBasis, vectors }
    }

    /// A 1/2-net of the unit sphere.
    pub fn eps_net_half(d: usize, cap: usize) -> Result<Self, LdsError> {
        if d > EPS_NET_MAX_DIM {
            return Err(LdsError::InvalidParameter(format!(
                "sphere-net exploration supports d <= {EPS_NET_MAX_DIM}, got {d}"
            )));
        }
        let net = sphere_net(0.5, d, cap)?;
        Ok(Self { kind: Variant::EpsNetHalf, vectors: net.vectors })
    }

    pub fn for_variant(variant: Variant, d: usize, cap: usize) -> Result<Self, LdsError> {
        match variant {
            Variant::StandardBasis => Ok(Self::standard_basis(d)),
            Variant::EpsNetHalf => Self::eps_net_half(d, cap),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Identification accuracy ε and confinement threshold `ln α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub eps: f64,
    pub alpha_log: f64,
}

fn check_constants(m: f64, l: f64, d: usize) -> Result<(), LdsError> {
    if !(m >= 1.0 && l > 0.0 && l <= 1.0 && d >= 1) {
        return Err(LdsError::InvalidParameter(format!(
            "need M >= 1, 0 < L <= 1, d >= 1 (got M = {m}, L = {l}, d = {d})"
        )));
    }
    Ok(())
}

pub fn default_parameters(m: f64, l: f64, d: usize, variant: Variant) -> Result<Parameters, LdsError> {
    check_constants(m, l, d)?;
    let df = d as f64;
    match variant {
        Variant::StandardBasis => Ok(Parameters {
            eps: l / (150.0 * m * df),
            alpha_log: df * (14.0 * LN4 + 8.0 * m.ln() + 2.0 * df.ln() - 2.0 * l.ln()),
        }),
        Variant::EpsNetHalf => {
            if d > EPS_NET_MAX_DIM {
                return Err(LdsError::InvalidParameter(format!(
                    "sphere-net exploration supports d <= {EPS_NET_MAX_DIM}, got {d}"
                )));
            }
            Ok(Parameters {
                eps: l / (1000.0 * m * df.sqrt()),
                alpha_log: 5f64.powi(d as i32) * (16.0 * LN4 + 8.0 * m.ln() + df.ln() - 2.0 * l.ln()),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    /// `λ_i = 4^{2i} M^{2i+1} q ε^{−(i+1)}`.
    ControlId,
    /// `ξ_j = 4^{3j} M^{3j+2} q′ ε^{−(j+1)}`.
    SysId,
}

/// Natural log of a probe scale.
pub fn exploration_scale_log(kind: ProbeKind, i: usize, ln_q: f64, m: f64, eps: f64) -> f64 {
    let i = i as f64;
    match kind {
        ProbeKind::ControlId => 2.0 * i * LN4 + (2.0 * i + 1.0) * m.ln() + ln_q - (i + 1.0) * eps.ln(),
        ProbeKind::SysId => 3.0 * i * LN4 + (3.0 * i + 2.0) * m.ln() + ln_q - (i + 1.0) * eps.ln(),
    }
}

fn checked_exp(what: &'static str, log_value: f64) -> Result<f64, ControlError> {
    let v = log_value.exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ControlError::CertifiedOverflow { what, log_value })
    }
}

pub fn exploration_scale(kind: ProbeKind, i: usize, q: f64, m: f64, eps: f64) -> Result<f64, ControlError> {
    let what = match kind {
        ProbeKind::ControlId => "lambda",
        ProbeKind::SysId => "xi",
    };
    checked_exp(what, exploration_scale_log(kind, i, q.ln(), m, eps))
}

/// `q′ = 4^{2d} M^{2d} ε^{−d} q`.
pub fn post_control_budget(q: f64, m: f64, eps: f64, d: usize) -> Result<f64, ControlError> {
    let d = d as f64;
    checked_exp("q_prime", 2.0 * d * LN4 + 2.0 * d * m.ln() - d * eps.ln() + q.ln())
}

/// Identification stage. `ControlId(d)` and `SysIdEven(2N)` are the closing
/// observations at which `B̂` and `Â` are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    ControlId(usize),
    SysIdEven(usize),
    SysIdOdd(usize),
    Exploit,
}

impl Phase {
    pub fn label(&self) -> String {
        match self {
            Phase::Idle => "idle".into(),
            Phase::ControlId(i) => format!("control_id({i})"),
            Phase::SysIdEven(i) => format!("sysid_even({i})"),
            Phase::SysIdOdd(i) => format!("sysid_odd({i})"),
            Phase::Exploit => "exploit".into(),
        }
    }
}

/// Observed responses and the scale of the probe that produced each.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecords {
    pub control: Vec<(DVector<f64>, f64)>,
    pub sysid: Vec<(DVector<f64>, f64)>,
}

impl ProbeRecords {
    fn rescale(&mut self, k: i32) {
        for (x, s) in self.control.iter_mut().chain(self.sysid.iter_mut()) {
            x.iter_mut().for_each(|c| *c = ldexp(*c, -k));
            *s = ldexp(*s, -k);
        }
    }
}

/// Columns `x / scale`.
pub fn assemble_columns(records: &[(DVector<f64>, f64)]) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = records.iter().map(|(x, s)| x / *s).collect();
    DMatrix::from_columns(&cols)
}

/// `K = B̂⁻¹ Â` by LU solve.
pub fn synthesize_k(a_hat: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<DMatrix<f64>, ControlError> {
    solve(b_hat, a_hat).ok_or_else(|| ControlError::Internal("B_hat is singular".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartReason {
    /// `‖x_{1:t}‖ > α q` during identification.
    Threshold,
    /// `σ_min(B̂) < L/2`.
    SigmaMin,
    /// `‖Â‖₂ > 2M`.
    AHatNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent {
    /// Threshold crossed outside identification.
    EpochStart { q_old: f64, q_new: f64 },
    Restart { reason: RestartReason, q_old: f64, q_new: f64, phase: Phase },
    Transition { from: Phase, to: Phase },
}

/// The controller's mutable knowledge. Degree-one quantities (q, q′, probe
/// records) are held in units of `2^scale_log2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochState {
    pub q: f64,
    pub q_prime: f64,
    pub epoch: usize,
    pub phase: Phase,
    pub b_hat: Option<DMatrix<f64>>,
    pub a_hat: Option<DMatrix<f64>>,
    pub k: DMatrix<f64>,
    pub eps: f64,
    pub alpha_log: f64,
    pub records: ProbeRecords,
    pub m: f64,
    pub l: f64,
    pub exploration: ExplorationSet,
    pub scale_log2: i32,
    /// Certified gap of the last `minimize_phi` call (sphere-net variant).
    pub phi_gap: Option<f64>,
}

/// Either a control to play now, or a phase change to act on at the same step.
enum Sub {
    Play(DVector<f64>),
    Next,
}

impl EpochState {
    pub fn new(m: f64, l: f64, params: Parameters, exploration: ExplorationSet) -> Result<Self, LdsError> {
        let d = exploration.vectors.first().map_or(0, |v| v.len());
        check_constants(m, l, d)?;
        if !(params.eps > 0.0 && params.alpha_log >= 0.0) {
            return Err(LdsError::InvalidParameter("need eps > 0 and ln alpha >= 0".into()));
        }
        Ok(Self {
            q: 0.0,
            q_prime: 0.0,
            epoch: 0,
            phase: Phase::Idle,
            b_hat: None,
            a_hat: None,
            k: DMatrix::zeros(d, d),
            eps: params.eps,
            alpha_log: params.alpha_log,
            records: ProbeRecords::default(),
            m,
            l,
            exploration,
            scale_log2: 0,
            phi_gap: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    /// `ln q` in raw units.
    pub fn ln_q(&self) -> f64 {
        self.q.ln() + f64::from(self.scale_log2) * std::f64::consts::LN_2
    }

    /// `ln prefix > ln α + ln q`, strict.
    pub fn exceeds(&self, prefix: f64) -> bool {
        prefix > 0.0 && prefix.ln() > self.alpha_log + self.q.ln()
    }

    pub fn rescale(&mut self, k: i32) {
        self.q = ldexp(self.q, -k);
        self.q_prime = ldexp(self.q_prime, -k);
        self.records.rescale(k);
        self.scale_log2 += k;
    }

    fn restart(&mut self, prefix: f64, reason: RestartReason) -> StepEvent {
        let ev = StepEvent::Restart { reason, q_old: self.q, q_new: prefix, phase: self.phase };
        self.q = prefix;
        self.epoch += 1;
        self.phase = Phase::ControlId(0);
        self.records = ProbeRecords::default();
        self.b_hat = None;
        self.a_hat = None;
        ev
    }

    fn transition(&mut self, to: Phase) -> StepEvent {
        let ev = StepEvent::Transition { from: self.phase, to };
        self.phase = to;
        ev
    }

    /// One observation while identifying `B`.
    pub fn control_matrix_id_step(
        &mut self,
        x: &DVector<f64>,
        prefix: f64,
        events: &mut Vec<StepEvent>,
    ) -> Result<Option<DVector<f64>>, ControlError> {
        self.sub_control(x, prefix, events).map(Sub::into_option)
    }

    /// One observation while identifying `A`.
    pub fn sysid_step(
        &mut self,
        x: &DVector<f64>,
        prefix: f64,
        events: &mut Vec<StepEvent>,
    ) -> Result<Option<DVector<f64>>, ControlError> {
        self.sub_sysid(x, prefix, events).map(Sub::into_option)
    }

    fn sub_control(&mut self, x: &DVector<f64>, prefix: f64, events: &mut Vec<StepEvent>) -> Result<Sub, ControlError> {
        let Phase::ControlId(i) = self.phase else {
            return Err(ControlError::Internal(format!("control id step in {:?}", self.phase)));
        };
        let d = self.dim();
        if i > 0 {
            let lambda = exploration_scale(ProbeKind::ControlId, i - 1, self.q, self.m, self.eps)?;
            self.records.control.push((x.clone(), lambda));
        }
        if self.exceeds(prefix) {
            events.push(self.restart(prefix, RestartReason::Threshold));
            return Ok(Sub::Next);
        }
        if i < d {
            let lambda = exploration_scale(ProbeKind::ControlId, i, self.q, self.m, self.eps)?;
            let mut u = DVector::zeros(d);
            u[i] = lambda;
            self.phase = Phase::ControlId(i + 1);
            return Ok(Sub::Play(u));
        }
        let b_hat = assemble_columns(&self.records.control);
        if sigma_min(&b_hat) < self.l / 2.0 {
            events.push(self.restart(prefix, RestartReason::SigmaMin));
            return Ok(Sub::Next);
        }
        self.b_hat = Some(b_hat);
        self.q_prime = post_control_budget(self.q, self.m, self.eps, d)?;
        events.push(self.transition(Phase::SysIdEven(0)));
        Ok(Sub::Next)
    }

    fn sub_sysid(&mut self, x: &DVector<f64>, prefix: f64, events: &mut Vec<StepEvent>) -> Result<Sub, ControlError> {
        let n = self.exploration.len();
        let Some(b_hat) = self.b_hat.clone() else {
            return Err(ControlError::Internal("system identification without B_hat".into()));
        };
        match self.phase {
            Phase::SysIdEven(i) => {
                if i > 0 {
                    let xi = exploration_scale(ProbeKind::SysId, i / 2 - 1, self.q_prime, self.m, self.eps)?;
                    self.records.sysid.push((x.clone(), xi));
                }
                if self.exceeds(prefix) {
                    events.push(self.restart(prefix, RestartReason::Threshold));
                    return Ok(Sub::Next);
                }
                if i < 2 * n {
                    let j = i / 2;
                    let xi = exploration_scale(ProbeKind::SysId, j, self.q_prime, self.m, self.eps)?;
                    let v = DMatrix::from_column_slice(self.dim(), 1, self.exploration.vectors[j].as_slice());
                    let dir = solve(&b_hat, &v).ok_or_else(|| ControlError::Internal("B_hat is singular".into()))?;
                    self.phase = Phase::SysIdOdd(i + 1);
                    return Ok(Sub::Play(dir.column(0) * xi));
                }
                self.finish_sysid(&b_hat, prefix, events)
            }
            Phase::SysIdOdd(i) => {
                if self.exceeds(prefix) {
                    events.push(self.restart(prefix, RestartReason::Threshold));
                    return Ok(Sub::Next);
                }
                self.phase = Phase::SysIdEven(i + 1);
                Ok(Sub::Play(DVector::zeros(self.dim())))
            }
            other => Err(ControlError::Internal(format!("sysid step in {other:?}"))),
        }
    }

    fn finish_sysid(&mut self, b_hat: &DMatrix<f64>, prefix: f64, events: &mut Vec<StepEvent>) -> Result<Sub, ControlError> {
        let a_hat = match self.exploration.kind {
            Variant::StandardBasis => {
                let a_hat = assemble_columns(&self.records.sysid);
                if spectral_norm(&a_hat) > 2.0 * self.m {
                    events.push(self.restart(prefix, RestartReason::AHatNorm));
                    return Ok(Sub::Next);
                }
                a_hat
            }
            Variant::EpsNetHalf => {
                let targets: Vec<DVector<f64>> = self.records.sysid.iter().map(|(x, s)| x / *s).collect();
                let tol = 1e-9 * self.m;
                let sol = minimize_phi(&self.exploration.vectors, &targets, self.m, tol, 20_000);
                self.phi_gap = Some(sol.gap());
                sol.a_hat
            }
        };
        self.k = synthesize_k(&a_hat, b_hat)?;
        self.a_hat = Some(a_hat);
        events.push(self.transition(Phase::Exploit));
        Ok(Sub::Next)
    }

    fn sub_exploit(&mut self, x: &DVector<f64>, prefix: f64, events: &mut Vec<StepEvent>) -> Sub {
        if self.exceeds(prefix) {
            events.push(StepEvent::EpochStart { q_old: self.q, q_new: prefix });
            self.q = prefix;
            self.epoch += 1;
            self.phase = Phase::ControlId(0);
            self.records = ProbeRecords::default();
            self.b_hat = None;
            self.a_hat = None;
            return Sub::Next;
        }
        Sub::Play(-(&self.k * x))
    }
}

impl Sub {
    fn into_option(self) -> Option<DVector<f64>> {
        match self {
            Sub::Play(u) => Some(u),
            Sub::Next => None,
        }
    }
}

/// Full per-observation dispatch; returns the control played at this step.
pub fn l2_gain_controller_step(
    state: &mut EpochState,
    x: &DVector<f64>,
    prefix: f64,
    events: &mut Vec<StepEvent>,
) -> Result<DVector<f64>, ControlError> {
    // Each pass either plays or strictly advances/restarts; a restart at the
    // same step cannot re-trigger because q equals the prefix afterwards.
    for _ in 0..16 {
        let sub = match state.phase {
            Phase::Idle | Phase::Exploit => state.sub_exploit(x, prefix, events),
            Phase::ControlId(_) => state.sub_control(x, prefix, events)?,
            Phase::SysIdEven(_) | Phase::SysIdOdd(_) => state.sub_sysid(x, prefix, events)?,
        };
        if let Sub::Play(u) = sub {
            return Ok(u);
        }
    }
    Err(ControlError::Internal("controller did not settle within one step".into()))
}

/// Configuration of the adaptive controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2GainConfig {
    pub m: f64,
    pub l: f64,
    pub d: usize,
    pub variant: Variant,
    pub eps_override: Option<f64>,
    pub alpha_override_log: Option<f64>,
    /// Known disturbance budget; exploration starts at t = 1 with `q = budget`.
    pub initial_budget: Option<f64>,
    pub net_cap: usize,
}

impl L2GainConfig {
    pub fn new(m: f64, l: f64, d: usize) -> Self {
        Self {
            m,
            l,
            d,
            variant: Variant::StandardBasis,
            eps_override: None,
            alpha_override_log: None,
            initial_budget: None,
            net_cap: DEFAULT_NET_CAP,
        }
    }

    pub fn parameters(&self) -> Result<Parameters, LdsError> {
        let mut p = default_parameters(self.m, self.l, self.d, self.variant)?;
        if let Some(e) = self.eps_override {
            p.eps = e;
        }
        if let Some(a) = self.alpha_override_log {
            p.alpha_log = a;
        }
        Ok(p)
    }
}

/// Estimates in force when an identification pass completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub t: usize,
    pub epoch: usize,
    /// `ln q` in raw units for the epoch that produced the estimates.
    pub ln_q: f64,
    pub b_hat: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

/// Adaptive controller wrapped for [`crate::lds::rollout`].
#[derive(Debug, Clone)]
pub struct L2GainController {
    pub state: EpochState,
    /// Every step event with the time it happened.
    pub history: Vec<(usize, StepEvent)>,
    pub identifications: Vec<Identification>,
    pending: Vec<ControllerEvent>,
}

impl L2GainController {
    pub fn new(cfg: &L2GainConfig) -> Result<Self, LdsError> {
        let exploration = ExplorationSet::for_variant(cfg.variant, cfg.d, cfg.net_cap)?;
        let mut state = EpochState::new(cfg.m, cfg.l, cfg.parameters()?, exploration)?;
        if let Some(q0) = cfg.initial_budget {
            if !(q0 > 0.0 && q0.is_finite()) {
                return Err(LdsError::InvalidParameter("initial budget must be positive".into()));
            }
            state.q = q0;
            state.epoch = 1;
            state.phase = Phase::ControlId(0);
        }
        Ok(Self { state, history: Vec::new(), identifications: Vec::new(), pending: Vec::new() })
    }

    /// Count of budget raises (epoch starts and restarts) so far.
    pub fn restarts(&self) -> usize {
        self.history
            .iter()
            .filter(|(_, e)| !matches!(e, StepEvent::Transition { .. }))
            .count()
    }

    fn ln_raw(&self, v: f64) -> f64 {
        v.ln() + f64::from(self.state.scale_log2) * std::f64::consts::LN_2
    }
}

impl Controller for L2GainController {
    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>, ControlError> {
        let mut events = Vec::new();
        let out = l2_gain_controller_step(&mut self.state, obs.x, obs.prefix_x, &mut events);
        for ev in events {
            let ce = match &ev {
                StepEvent::EpochStart { q_old, q_new } => ControllerEvent {
                    t: obs.t,
                    event: "epoch_start".into(),
                    ln_q_old: self.ln_raw(*q_old),
                    ln_q_new: self.ln_raw(*q_new),
                    phase: Phase::ControlId(0).label(),
                    reason: None,
                },
                StepEvent::Restart { reason, q_old, q_new, phase } => ControllerEvent {
                    t: obs.t,
                    event: "restart".into(),
                    ln_q_old: self.ln_raw(*q_old),
                    ln_q_new: self.ln_raw(*q_new),
                    phase: phase.label(),
                    reason: Some(format!("{reason:?}")),
                },
                StepEvent::Transition { from, to } => ControllerEvent {
                    t: obs.t,
                    event: "phase".into(),
                    ln_q_old: self.state.ln_q(),
                    ln_q_new: self.state.ln_q(),
                    phase: to.label(),
                    reason: Some(from.label()),
                },
            };
            if let StepEvent::Transition { to: Phase::Exploit, .. } = ev {
                if let (Some(b_hat), Some(a_hat)) = (&self.state.b_hat, &self.state.a_hat) {
                    self.identifications.push(Identification {
                        t: obs.t,
                        epoch: self.state.epoch,
                        ln_q: self.state.ln_q(),
                        b_hat: b_hat.clone(),
                        a_hat: a_hat.clone(),
                        k: self.state.k.clone(),
                    });
                }
            }
            self.pending.push(ce);
            self.history.push((obs.t, ev));
        }
        out
    }

    fn epoch(&self) -> usize {
        self.state.epoch
    }

    fn phase(&self) -> String {
        self.state.phase.label()
    }

    fn gain_hint(&self) -> Option<DMatrix<f64>> {
        Some(self.state.k.clone())
    }

    fn rescale(&mut self, k: i32) {
        self.state.rescale(k);
    }

    fn drain_events(&mut self) -> Vec<ControllerEvent> {
        std::mem::take(&mut self.pending)
    }
}

/// `ln` of the certified ℓ₂-gain bound.
pub fn gain_certificate_log(m: f64, l: f64, d: usize, variant: Variant) -> Result<f64, LdsError> {
    let p = default_parameters(m, l, d, variant)?;
    Ok(match variant {
        Variant::StandardBasis => (10.0 * m * m / l).ln() + 2.0 * p.alpha_log,
        Variant::EpsNetHalf => {
            let df = d as f64;
            2.0 * 5f64.powi(d as i32) * (17.0 * LN4 + 10.0 * m.ln() + df.ln() - 3.0 * l.ln())
        }
    })
}

/// Looser closed form `2d·ln(4^15 M^10 d² / L³)` for the standard-basis bound.
pub fn gain_certificate_closed_form_log(m: f64, l: f64, d: usize) -> f64 {
    let df = d as f64;
    2.0 * df * (15.0 * LN4 + 10.0 * m.ln() + 2.0 * df.ln() - 3.0 * l.ln())
}
