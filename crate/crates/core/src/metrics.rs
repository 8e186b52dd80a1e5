//! Gain, robustness, cost and invariant measurements over recorded trajectories.

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::adaptive::{L2GainController, Variant};
use crate::baselines::cusumano_poolla::{cp_gain_bound_log, CusumanoPoolla};
use crate::lds::{LinearFeedback, SystemInstance, Trajectory};
use crate::linalg::{log_add_exp, sigma_min, solve, spectral_norm};

/// A ratio that is undefined when its denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gain {
    Defined(f64),
    Undefined,
}

impl Gain {
    pub fn value(self) -> Option<f64> {
        match self {
            Gain::Defined(v) => Some(v),
            Gain::Undefined => None,
        }
    }
}

impl Serialize for Gain {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Gain::Defined(v) if v.is_finite() => s.serialize_f64(*v),
            Gain::Defined(_) => s.serialize_str("overflow"),
            Gain::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl From<Option<f64>> for Gain {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Gain::Undefined, Gain::Defined)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantResult {
    pub name: String,
    pub pass: bool,
    /// Slack of the inequality (in natural-log units for `_log` checks); negative on failure.
    pub margin: f64,
}

impl InvariantResult {
    pub fn new(name: impl Into<String>, pass: bool, margin: f64) -> Self {
        Self { name: name.into(), pass, margin }
    }

    /// `value ≤ bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value <= bound, bound - value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub realized_gain: Gain,
    pub realized_gain_log: Gain,
    pub peak_gain_log: Gain,
    pub certificate_log: Option<f64>,
    pub epochs: usize,
    pub switches: u64,
    pub invariant_results: Vec<InvariantResult>,
    pub cost_lqr: f64,
    pub cost_lqr_log: f64,
    pub horizon: usize,
    pub error: Option<String>,
    pub failed_at: Option<usize>,
}

impl GainReport {
    pub fn invariants_pass(&self) -> bool {
        self.invariant_results.iter().all(|r| r.pass)
    }
}

/// `ln(‖x_{1:T}‖ / ‖f_{0:T−1}‖)`.
pub fn l2_gain_log(traj: &Trajectory) -> Option<f64> {
    let t = traj.horizon();
    if t == 0 {
        return None;
    }
    let lf = traj.ln_prefix_f(t - 1);
    (lf > f64::NEG_INFINITY).then(|| traj.ln_prefix_x(t) - lf)
}

/// `‖x_{1:T}‖ / ‖f_{0:T−1}‖`, or `None` when no disturbance entered.
pub fn l2_gain(traj: &Trajectory) -> Option<f64> {
    l2_gain_log(traj).map(f64::exp)
}

/// `max_t ln(‖x_{1:t}‖ / ‖f_{0:t−1}‖)` over prefixes with nonzero disturbance.
pub fn peak_prefix_gain_log(traj: &Trajectory) -> Option<f64> {
    (1..=traj.horizon())
        .filter_map(|t| {
            let lf = traj.ln_prefix_f(t - 1);
            (lf > f64::NEG_INFINITY).then(|| traj.ln_prefix_x(t) - lf)
        })
        .reduce(f64::max)
}

pub fn peak_prefix_gain(traj: &Trajectory) -> Option<f64> {
    peak_prefix_gain_log(traj).map(f64::exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessResult {
    pub first_violation: Option<usize>,
    /// `min_t (h²‖x_{1:t}‖² − ‖w_{0:t}‖²)` relative to `max(h²‖x_{1:t}‖², tiny)`.
    pub min_margin: f64,
}

impl RobustnessResult {
    pub fn pass(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Verifies `‖w_{0:t}‖ ≤ h ‖x_{1:t}‖` at every t, up to a 1e-12 relative rounding allowance.
pub fn robustness_check(traj: &Trajectory, h: f64) -> RobustnessResult {
    let mut first = None;
    let mut min_margin = f64::INFINITY;
    for s in &traj.steps {
        let allowed = h * h * s.x_sq;
        let margin = (allowed - s.w_sq) / allowed.max(f64::MIN_POSITIVE);
        min_margin = min_margin.min(margin);
        if s.w_sq > allowed * (1.0 + 1e-12) && first.is_none() {
            first = Some(s.t);
        }
    }
    RobustnessResult { first_violation: first, min_margin }
}

/// `(‖f‖²/(9M²), 8M²‖f‖²/L²)`.
pub fn opt_bounds(f_energy: f64, m: f64, l: f64) -> (f64, f64) {
    let f2 = f_energy * f_energy;
    (f2 / (9.0 * m * m), 8.0 * m * m * f2 / (l * l))
}

/// `u = −B⁻¹A x`, which cancels the nominal dynamics.
pub fn oracle_controller(sys: &SystemInstance) -> Option<LinearFeedback> {
    solve(&sys.b, &sys.a).map(|k| LinearFeedback { k })
}

/// `ln Σ_{t=1..T} (‖x_t‖² + ‖u_t‖²)` in raw units.
pub fn cost_lqr_log(traj: &Trajectory) -> f64 {
    traj.steps
        .iter()
        .skip(1)
        .map(|s| {
            let e = s.x.norm_squared() + s.u.norm_squared();
            if e == 0.0 {
                f64::NEG_INFINITY
            } else {
                e.ln() + 2.0 * f64::from(s.scale_log2) * std::f64::consts::LN_2
            }
        })
        .fold(f64::NEG_INFINITY, log_add_exp)
}

pub fn cost_lqr(traj: &Trajectory) -> f64 {
    cost_lqr_log(traj).exp()
}

/// Cost divided by an estimate of the offline optimum.
pub fn competitive_ratio(traj: &Trajectory, opt_estimate: f64) -> Gain {
    let cost = cost_lqr(traj);
    if cost == 0.0 {
        Gain::Defined(0.0)
    } else if opt_estimate > 0.0 {
        Gain::Defined(cost / opt_estimate)
    } else {
        Gain::Undefined
    }
}

/// `max_t ‖u_{1:t}‖ / ‖x_{1:t}‖` at the horizon; the factor linking cost and gain.
pub fn control_to_state_ratio(traj: &Trajectory) -> Option<f64> {
    let mut u_log = f64::NEG_INFINITY;
    for s in traj.steps.iter().skip(1) {
        let e = s.u.norm_squared();
        if e > 0.0 {
            u_log = log_add_exp(u_log, e.ln() + 2.0 * f64::from(s.scale_log2) * std::f64::consts::LN_2);
        }
    }
    let x_log = 2.0 * traj.ln_prefix_x(traj.horizon());
    (x_log > f64::NEG_INFINITY).then(|| (0.5 * (u_log - x_log)).exp())
}

/// Budget raises recorded by a controller that satisfy `q_new > α q_old`, and all of them non-decreasing.
fn budget_checks(traj: &Trajectory, alpha_log: f64, out: &mut Vec<InvariantResult>) {
    let mut growth_margin = f64::INFINITY;
    let mut monotone_margin = f64::INFINITY;
    let mut threshold_raises = Vec::new();
    for e in &traj.events {
        let is_threshold = e.event == "epoch_start"
            || e.event == "switch"
            || (e.event == "restart" && e.reason.as_deref() == Some("Threshold"));
        if e.event == "phase" {
            continue;
        }
        monotone_margin = monotone_margin.min(e.ln_q_new - e.ln_q_old);
        if is_threshold {
            growth_margin = growth_margin.min(e.ln_q_new - (alpha_log + e.ln_q_old));
            threshold_raises.push(e.ln_q_new);
        }
    }
    out.push(InvariantResult::new("budget_non_decreasing", monotone_margin >= 0.0, monotone_margin));
    out.push(InvariantResult::new(
        "budget_geometric_growth",
        growth_margin > 0.0,
        if growth_margin.is_finite() { growth_margin } else { f64::MAX },
    ));
    if let (Some(first), Some(last)) = (threshold_raises.first(), threshold_raises.last()) {
        if alpha_log > 0.0 {
            let bound = 1.0 + (last - first) / alpha_log;
            out.push(InvariantResult::at_most("threshold_epoch_count", threshold_raises.len() as f64, bound));
        }
    }
}

/// Invariants of the adaptive controller. Lemma-level estimator checks are
/// evaluated only for identifications whose budget covered the whole disturbance.
pub fn adaptive_invariants(traj: &Trajectory, ctrl: &L2GainController, sys: &SystemInstance, h: f64) -> Vec<InvariantResult> {
    let st = &ctrl.state;
    let d = sys.dim();
    let df = d as f64;
    let mut out = Vec::new();
    let rob = robustness_check(traj, h);
    out.push(InvariantResult::new("robustness_budget", rob.pass(), rob.min_margin));
    budget_checks(traj, st.alpha_log, &mut out);

    let a_cap = match st.exploration.kind {
        Variant::StandardBasis => 2.0 * st.m,
        Variant::EpsNetHalf => st.m * (1.0 + 1e-12),
    };
    let mut worst_sigma = f64::INFINITY;
    let mut worst_a = f64::INFINITY;
    for id in &ctrl.identifications {
        worst_sigma = worst_sigma.min(sigma_min(&id.b_hat) - st.l / 2.0);
        worst_a = worst_a.min(a_cap - spectral_norm(&id.a_hat));
    }
    if !ctrl.identifications.is_empty() {
        out.push(InvariantResult::new("exploit_sigma_min_b_hat", worst_sigma >= 0.0, worst_sigma));
        out.push(InvariantResult::new("exploit_a_hat_norm", worst_a >= 0.0, worst_a));
    }

    let t = traj.horizon();
    if let Some(gain_log) = l2_gain_log(traj) {
        if st.exploration.kind == Variant::StandardBasis {
            let cert = (10.0 * st.m * st.m / st.l).ln() + 2.0 * st.alpha_log;
            out.push(InvariantResult::at_most("gain_certificate_log", gain_log, cert));
        }
    }

    let ln_f = if t > 0 { traj.ln_prefix_f(t - 1) } else { f64::NEG_INFINITY };
    let budget_valid: Vec<_> = ctrl.identifications.iter().filter(|id| id.ln_q >= ln_f).collect();
    let tol = 1e-9;
    for id in &budget_valid {
        let b_err = (&id.b_hat - &sys.b).norm();
        out.push(InvariantResult::at_most("b_hat_frobenius", b_err, 3.0 * st.eps * df.sqrt() * (1.0 + tol)));
        if let Some(inv) = id.b_hat.clone().try_inverse() {
            let dev = spectral_norm(&(&sys.b * inv - DMatrix::identity(d, d)));
            out.push(InvariantResult::at_most("b_b_hat_inverse", dev, 0.5 + tol));
        }
        if st.exploration.kind == Variant::StandardBasis {
            let diff = &sys.a - &id.a_hat;
            let col = (0..d).map(|i| diff.column(i).norm()).fold(0.0, f64::max);
            let bound = 28.0 * st.eps * st.m * df.sqrt() / st.l + 3.0 * h;
            out.push(InvariantResult::at_most("a_hat_columns", col, bound * (1.0 + tol)));
        }
        if h <= 1.0 / (12.0 * df.sqrt()) {
            let closed = spectral_norm(&(&sys.a - &sys.b * &id.k));
            out.push(InvariantResult::at_most("closed_loop_contraction", closed, 0.5 + tol));
        }
    }
    if let Some(first_valid) = budget_valid.first() {
        // once the budget covers f, the state stays under α q
        let confine = traj.ln_prefix_x(t) - (st.alpha_log + first_valid.ln_q);
        out.push(InvariantResult::new("epoch_confinement_log", confine <= 1e-12, -confine));
    }
    out
}

/// Invariants of the enumeration controller.
pub fn cp_invariants(traj: &Trajectory, ctrl: &CusumanoPoolla, h: f64, f_bound: f64) -> Vec<InvariantResult> {
    let st = &ctrl.state;
    let mut out = Vec::new();
    let rob = robustness_check(traj, h);
    out.push(InvariantResult::new("robustness_budget", rob.pass(), rob.min_margin));
    budget_checks(traj, st.alpha.ln(), &mut out);
    // exact scan when cheap, otherwise a certified lower bound on the net size
    let net = if st.grid_len <= 2_000_000 { st.net_size() } else { st.grid.frobenius_ball_count() };
    out.push(InvariantResult::at_most("switches_within_net", st.switches as f64, net as f64));
    if f_bound > 0.0 {
        let ln_ratio = traj.ln_prefix_x(traj.horizon()) - f_bound.ln();
        let bound = cp_gain_bound_log(st.kappa, st.m, st.grid.d, st.grid.p);
        out.push(InvariantResult::at_most("state_bound_log", ln_ratio, bound));
    }
    out
}

/// Invariants of certainty equivalence on a scalar plant.
pub fn cert_equiv_invariants(traj: &Trajectory, m: f64, h: f64) -> Vec<InvariantResult> {
    let mut out = Vec::new();
    let rob = robustness_check(traj, h);
    out.push(InvariantResult::new("robustness_budget", rob.pass(), rob.min_margin));
    if m >= 0.25 && h < 0.5 {
        if let Some(g) = peak_prefix_gain(traj) {
            let bound = crate::baselines::cert_equiv_gain_bound(m, h);
            out.push(InvariantResult::at_most("cert_equiv_gain", g, bound));
        }
    }
    out
}

/// Assembles a report; `certificate_log` is `None` when the controller has no certificate.
pub fn gain_report(
    traj: &Trajectory,
    certificate_log: Option<f64>,
    epochs: usize,
    switches: u64,
    invariant_results: Vec<InvariantResult>,
) -> GainReport {
    let cost_log = cost_lqr_log(traj);
    GainReport {
        realized_gain: l2_gain(traj).into(),
        realized_gain_log: l2_gain_log(traj).into(),
        peak_gain_log: peak_prefix_gain_log(traj).into(),
        certificate_log,
        epochs,
        switches,
        invariant_results,
        cost_lqr: cost_log.exp(),
        cost_lqr_log: cost_log,
        horizon: traj.horizon(),
        error: None,
        failed_at: None,
    }
}
