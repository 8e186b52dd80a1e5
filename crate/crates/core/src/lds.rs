//! Plant simulation: `x_{t+1} = A x_t + B u_t + w_t + f_t` with `x_0 = u_0 = w_0 = 0`.
//!
//! Every controller and misspecification operator in this crate is positively
//! homogeneous of degree one in the state. The rollout exploits that to stay in
//! floating range: once the running state energy passes `2^200` all live
//! quantities are divided by a power of two and the exponent is recorded per
//! step. Powers of two are exact, so the rescaled run is the same computation in
//! different units.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ControlError, LdsError, RolloutError, RolloutFailure};
use crate::linalg::{ldexp, sigma_min, spectral_norm, with_singular_values};

const RESCALE_LOG2: f64 = 200.0;

/// The hidden plant together with its published bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInstance {
    /// State transition, d×d.
    pub a: DMatrix<f64>,
    /// Control input, d×p (square for everything except the enumeration baseline).
    pub b: DMatrix<f64>,
    /// Published bound on `‖A‖₂` and `‖B‖₂`.
    pub m: f64,
    /// Published lower bound on `σ_min(B)`.
    pub l: f64,
}

impl SystemInstance {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, m: f64, l: f64) -> Result<Self, LdsError> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(LdsError::Dimension {
                what: "A columns",
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(LdsError::Dimension {
                what: "B rows",
                expected: a.nrows(),
                found: b.nrows(),
            });
        }
        if !(m.is_finite() && l.is_finite()) {
            return Err(LdsError::InvalidParameter("M and L must be finite".into()));
        }
        Ok(Self { a, b, m, l })
    }

    /// Scalar plant `x_{t+1} = a x + b u + w + f`.
    pub fn scalar(a: f64, b: f64, m: f64, l: f64) -> Self {
        Self {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            m,
            l,
        }
    }

    /// State dimension d.
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension p.
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Random fully actuated plant: `‖A‖₂` uniform in `[0, M]`, singular values of
    /// `B` uniform in `(L, M]`, Haar-random singular vectors.
    pub fn random<R: Rng + ?Sized>(d: usize, m: f64, l: f64, rng: &mut R) -> Result<Self, LdsError> {
        if d == 0 {
            return Err(LdsError::InvalidParameter("d must be positive".into()));
        }
        if !(m >= 1.0 && l > 0.0 && l <= 1.0 && l < m) {
            return Err(LdsError::InvalidParameter(format!(
                "need M >= 1, 0 < L <= 1, L < M (got M = {m}, L = {l})"
            )));
        }
        let top = rng.gen_range(0.0..=m);
        let mut sa: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..=top)).collect();
        sa[0] = top;
        let a = with_singular_values(d, d, &sa, rng);
        // Stay strictly inside (L, M] after round-off.
        let lo = l + 1e-6 * (m - l);
        let hi = m - 1e-9 * m;
        let sb: Vec<f64> = (0..d).map(|_| rng.gen_range(lo..=hi)).collect();
        let b = with_singular_values(d, d, &sb, rng);
        Self::new(a, b, m, l)
    }
}

/// One plant update: `A x + B u + w + f`.
pub fn step(
    sys: &SystemInstance,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    f: &DVector<f64>,
) -> Result<DVector<f64>, LdsError> {
    let d = sys.dim();
    for (what, v, n) in [("x", x, d), ("u", u, sys.inputs()), ("w", w, d), ("f", f, d)] {
        if v.len() != n {
            return Err(LdsError::Dimension {
                what,
                expected: n,
                found: v.len(),
            });
        }
    }
    Ok(&sys.a * x + &sys.b * u + w + f)
}

/// `‖v_{1:t}‖₂`: the norm of the concatenation of the first `t` vectors.
pub fn prefix_energy(vectors: &[DVector<f64>], t: usize) -> f64 {
    vectors[..t].iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

/// Outcome of checking the published bounds against the true matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub a_norm: f64,
    pub b_norm: f64,
    pub b_sigma_min: f64,
    pub a_within_m: bool,
    pub b_within_m: bool,
    pub sigma_min_above_l: bool,
    pub constants_in_range: bool,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.a_within_m && self.b_within_m && self.sigma_min_above_l && self.constants_in_range
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.a_within_m {
            out.push(format!("||A|| = {} > M", self.a_norm));
        }
        if !self.b_within_m {
            out.push(format!("||B|| = {} > M", self.b_norm));
        }
        if !self.sigma_min_above_l {
            out.push(format!("sigma_min(B) = {} <= L", self.b_sigma_min));
        }
        if !self.constants_in_range {
            out.push("need M >= 1 and 0 < L <= 1".into());
        }
        out
    }
}

pub fn validate_system(sys: &SystemInstance) -> ValidationReport {
    let a_norm = spectral_norm(&sys.a);
    let b_norm = spectral_norm(&sys.b);
    let b_sigma_min = if sys.b.nrows() <= sys.b.ncols() && sys.b.is_square() {
        sigma_min(&sys.b)
    } else {
        0.0
    };
    ValidationReport {
        a_norm,
        b_norm,
        b_sigma_min,
        a_within_m: a_norm <= sys.m,
        b_within_m: b_norm <= sys.m,
        sigma_min_above_l: b_sigma_min > sys.l,
        constants_in_range: sys.m >= 1.0 && sys.l > 0.0 && sys.l <= 1.0,
    }
}

/// Something the controller wants logged: epoch starts, restarts, switches, phase changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerEvent {
    pub t: usize,
    pub event: String,
    /// Natural logs of the budget before and after, in raw units.
    pub ln_q_old: f64,
    pub ln_q_new: f64,
    pub phase: String,
    pub reason: Option<String>,
}

/// What a controller sees at time t.
pub struct Observation<'a> {
    pub t: usize,
    pub x: &'a DVector<f64>,
    /// `‖x_{1:t}‖₂` in current units.
    pub prefix_x: f64,
    pub history: &'a Trajectory,
}

pub trait Controller {
    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>, ControlError>;

    fn epoch(&self) -> usize {
        0
    }

    fn phase(&self) -> String {
        "run".into()
    }

    /// Feedback matrix currently applied, for adversaries that take it as a hint.
    fn gain_hint(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// Divide every degree-one internal quantity by `2^k`.
    fn rescale(&mut self, _k: i32) {}

    fn drain_events(&mut self) -> Vec<ControllerEvent> {
        Vec::new()
    }
}

/// Source of `w_t = Δ_t(x_{1:t})`.
pub trait Misspecification {
    fn perturb(&mut self, obs: &Observation<'_>, hint: Option<&DMatrix<f64>>) -> DVector<f64>;

    fn rescale(&mut self, _k: i32) {}
}

/// What an exogenous disturbance source sees at time t.
pub struct DisturbanceInput<'a> {
    pub t: usize,
    pub x: &'a DVector<f64>,
    pub u: &'a DVector<f64>,
    pub w: &'a DVector<f64>,
    pub prefix_x: f64,
    /// Current units are `2^scale_log2` raw units.
    pub scale_log2: i32,
    pub history: &'a Trajectory,
}

/// Source of `f_t`; must return values in current units.
pub trait Disturbance {
    fn next(&mut self, input: &DisturbanceInput<'_>) -> DVector<f64>;

    fn rescale(&mut self, _k: i32) {}
}

/// Always plays `u = 0`.
#[derive(Debug, Clone)]
pub struct ZeroController {
    pub p: usize,
}

impl Controller for ZeroController {
    fn act(&mut self, _obs: &Observation<'_>) -> Result<DVector<f64>, ControlError> {
        Ok(DVector::zeros(self.p))
    }
}

/// Static feedback `u = −K x`.
#[derive(Debug, Clone)]
pub struct LinearFeedback {
    pub k: DMatrix<f64>,
}

impl Controller for LinearFeedback {
    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>, ControlError> {
        Ok(-(&self.k * obs.x))
    }

    fn gain_hint(&self) -> Option<DMatrix<f64>> {
        Some(self.k.clone())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoMisspecification;

impl Misspecification for NoMisspecification {
    fn perturb(&mut self, obs: &Observation<'_>, _hint: Option<&DMatrix<f64>>) -> DVector<f64> {
        DVector::zeros(obs.x.len())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoDisturbance;

impl Disturbance for NoDisturbance {
    fn next(&mut self, input: &DisturbanceInput<'_>) -> DVector<f64> {
        DVector::zeros(input.x.len())
    }
}

/// One recorded time step. Vectors are in units of `2^scale_log2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub f: DVector<f64>,
    pub scale_log2: i32,
    /// `Σ_{s≤t} ‖x_s‖²` in this row's units; likewise for w.
    pub x_sq: f64,
    /// `Σ_{s≤t} ‖f_s‖²` in units of `4^f_scale_log2`. f does not follow the
    /// state, so it keeps its own exponent and never underflows on rescaling.
    pub f_sq: f64,
    pub f_scale_log2: i32,
    pub w_sq: f64,
    pub epoch: usize,
    pub phase: String,
}

/// Rows for t = 0..=T plus the state `x_{T+1}` produced by the last step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub final_state: Option<DVector<f64>>,
    pub final_scale_log2: i32,
    pub events: Vec<ControllerEvent>,
}

fn half_ln(sq: f64, scale: i32) -> f64 {
    if sq == 0.0 {
        f64::NEG_INFINITY
    } else {
        0.5 * sq.ln() + f64::from(scale) * std::f64::consts::LN_2
    }
}

impl Trajectory {
    /// Horizon T (the last recorded t).
    pub fn horizon(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.steps.first().map_or(0, |s| s.x.len())
    }

    /// `‖x_{1:t}‖₂` in raw units (may be `inf` past the floating range).
    pub fn prefix_x(&self, t: usize) -> f64 {
        let s = &self.steps[t];
        ldexp(s.x_sq.sqrt(), s.scale_log2)
    }

    /// `‖f_{0:t}‖₂` in raw units.
    pub fn prefix_f(&self, t: usize) -> f64 {
        let s = &self.steps[t];
        ldexp(s.f_sq.sqrt(), s.f_scale_log2)
    }

    /// `‖w_{0:t}‖₂` in raw units.
    pub fn prefix_w(&self, t: usize) -> f64 {
        let s = &self.steps[t];
        ldexp(s.w_sq.sqrt(), s.scale_log2)
    }

    /// Natural log of `‖x_{1:t}‖₂`; `-inf` when zero.
    pub fn ln_prefix_x(&self, t: usize) -> f64 {
        let s = &self.steps[t];
        half_ln(s.x_sq, s.scale_log2)
    }

    pub fn ln_prefix_f(&self, t: usize) -> f64 {
        let s = &self.steps[t];
        half_ln(s.f_sq, s.f_scale_log2)
    }

    pub fn ln_prefix_w(&self, t: usize) -> f64 {
        let s = &self.steps[t];
        half_ln(s.w_sq, s.scale_log2)
    }

    /// Raw-unit copy of the row vectors `(x, u, w, f)` at t.
    pub fn raw_row(&self, t: usize) -> [DVector<f64>; 4] {
        let s = &self.steps[t];
        let k = s.scale_log2;
        let r = |v: &DVector<f64>| v.map(|c| ldexp(c, k));
        [r(&s.x), r(&s.u), r(&s.w), r(&s.f)]
    }

    /// State `x_t` in raw units.
    pub fn raw_x(&self, t: usize) -> DVector<f64> {
        let s = &self.steps[t];
        s.x.map(|c| ldexp(c, s.scale_log2))
    }

    /// Next state `x_{t+1}` in the units of row t.
    pub fn next_state_in_row_units(&self, t: usize) -> Option<DVector<f64>> {
        let (next, scale) = if t + 1 < self.steps.len() {
            (&self.steps[t + 1].x, self.steps[t + 1].scale_log2)
        } else {
            (self.final_state.as_ref()?, self.final_scale_log2)
        };
        let shift = scale - self.steps[t].scale_log2;
        Some(next.map(|c| ldexp(c, shift)))
    }

    /// Writes the per-step CSV with 17 significant digits, values in raw units.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let d = self.dim();
        let p = self.steps.first().map_or(0, |s| s.u.len());
        let mut header = vec!["t".to_string()];
        for (name, n) in [("x", d), ("u", p), ("w", d), ("f", d)] {
            header.extend((0..n).map(|i| format!("{name}_{i}")));
        }
        header.extend(["prefix_x", "prefix_f", "epoch", "phase"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for (t, s) in self.steps.iter().enumerate() {
            let mut row = vec![s.t.to_string()];
            for v in self.raw_row(t) {
                row.extend(v.iter().map(|c| format!("{c:.16e}")));
            }
            row.push(format!("{:.16e}", self.prefix_x(t)));
            row.push(format!("{:.16e}", self.prefix_f(t)));
            row.push(s.epoch.to_string());
            row.push(s.phase.clone());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `sum · 4^scale += v_sq · 4^v_scale`, expressed in the units of the larger term.
fn accumulate_scaled(sum: &mut f64, scale: &mut i32, v_sq: f64, v_scale: i32) {
    if v_sq == 0.0 {
        return;
    }
    if *sum == 0.0 {
        (*sum, *scale) = (v_sq, v_scale);
        return;
    }
    let mag = |x: f64, s: i32| x.log2() + 2.0 * f64::from(s);
    if mag(v_sq, v_scale) > mag(*sum, *scale) {
        *sum = ldexp(*sum, 2 * (*scale - v_scale)) + v_sq;
        *scale = v_scale;
    } else {
        *sum += ldexp(v_sq, 2 * (v_scale - *scale));
    }
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Closed-loop simulation for t = 1..=T (plus the t = 0 row carrying `f_0`).
pub fn rollout(
    sys: &SystemInstance,
    controller: &mut dyn Controller,
    delta: &mut dyn Misspecification,
    f_source: &mut dyn Disturbance,
    horizon: usize,
) -> Result<Trajectory, Box<RolloutFailure>> {
    let d = sys.dim();
    let p = sys.inputs();
    let mut traj = Trajectory::default();
    let fail = |traj: Trajectory, error| Err(Box::new(RolloutFailure { partial: traj, error }));

    let mut scale: i32 = 0;
    let zero_x = DVector::zeros(d);
    let zero_u = DVector::zeros(p);
    let f0 = f_source.next(&DisturbanceInput {
        t: 0,
        x: &zero_x,
        u: &zero_u,
        w: &zero_x,
        prefix_x: 0.0,
        scale_log2: 0,
        history: &traj,
    });
    if f0.len() != d {
        let source = LdsError::Dimension { what: "f", expected: d, found: f0.len() };
        return fail(traj, RolloutError::Dimension { t: 0, source });
    }
    if !finite(&f0) {
        return fail(traj, RolloutError::NumericOverflow { t: 0 });
    }
    let mut x_sq = 0.0;
    let (mut f_sq, mut f_scale) = (0.0, 0);
    accumulate_scaled(&mut f_sq, &mut f_scale, f0.norm_squared(), 0);
    let mut w_sq = 0.0;
    let mut x = f0.clone();
    traj.steps.push(StepRecord {
        t: 0,
        x: zero_x.clone(),
        u: zero_u,
        w: zero_x,
        f: f0,
        scale_log2: 0,
        x_sq,
        f_sq,
        f_scale_log2: f_scale,
        w_sq,
        epoch: controller.epoch(),
        phase: controller.phase(),
    });

    for t in 1..=horizon {
        if !finite(&x) {
            return fail(traj, RolloutError::NumericOverflow { t });
        }
        let total = (x_sq + x.norm_squared()).sqrt();
        if !total.is_finite() {
            return fail(traj, RolloutError::NumericOverflow { t });
        }
        if total > 0.0 && total.log2() > RESCALE_LOG2 {
            let k = total.log2().floor() as i32;
            x.iter_mut().for_each(|c| *c = ldexp(*c, -k));
            x_sq = ldexp(x_sq, -2 * k);
            w_sq = ldexp(w_sq, -2 * k);
            scale += k;
            controller.rescale(k);
            delta.rescale(k);
            f_source.rescale(k);
        }
        x_sq += x.norm_squared();
        let prefix_x = x_sq.sqrt();

        let obs = Observation { t, x: &x, prefix_x, history: &traj };
        let u = match controller.act(&obs) {
            Ok(u) => u,
            Err(source) => {
                traj.events.extend(controller.drain_events());
                return fail(traj, RolloutError::Controller { t, source });
            }
        };
        let hint = controller.gain_hint();
        let w = delta.perturb(&obs, hint.as_ref());
        let f = f_source.next(&DisturbanceInput {
            t,
            x: &x,
            u: &u,
            w: &w,
            prefix_x,
            scale_log2: scale,
            history: &traj,
        });
        traj.events.extend(controller.drain_events());
        let next = match step(sys, &x, &u, &w, &f) {
            Ok(v) => v,
            Err(source) => return fail(traj, RolloutError::Dimension { t, source }),
        };
        if !(finite(&u) && finite(&w) && finite(&f)) {
            return fail(traj, RolloutError::NumericOverflow { t });
        }
        accumulate_scaled(&mut f_sq, &mut f_scale, f.norm_squared(), scale);
        w_sq += w.norm_squared();
        traj.steps.push(StepRecord {
            t,
            x: x.clone(),
            u,
            w,
            f,
            scale_log2: scale,
            x_sq,
            f_sq,
            f_scale_log2: f_scale,
            w_sq,
            epoch: controller.epoch(),
            phase: controller.phase(),
        });
        x = next;
    }
    if !finite(&x) {
        return fail(traj, RolloutError::NumericOverflow { t: horizon + 1 });
    }
    traj.final_state = Some(x);
    traj.final_scale_log2 = scale;
    Ok(traj)
}

/// Exogenous disturbance given up front as a list of raw-unit vectors; zero afterwards.
#[derive(Debug, Clone)]
pub struct ScriptedDisturbance {
    pub values: Vec<DVector<f64>>,
}

impl Disturbance for ScriptedDisturbance {
    fn next(&mut self, input: &DisturbanceInput<'_>) -> DVector<f64> {
        match self.values.get(input.t) {
            Some(v) => v.map(|c| ldexp(c, -input.scale_log2)),
            None => DVector::zeros(input.x.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64) -> SystemInstance {
        SystemInstance::scalar(a, 1.0, 2.0, 0.5)
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn step_examples() {
        let s = scalar(2.0);
        let z = v(&[0.0]);
        assert_eq!(step(&s, &v(&[1.0]), &z, &z, &z).unwrap(), v(&[2.0]));

        let s = SystemInstance::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 1.0, 0.5).unwrap();
        let z2 = v(&[0.0, 0.0]);
        assert_eq!(step(&s, &v(&[7.0, -3.0]), &v(&[5.0, 0.0]), &z2, &z2).unwrap(), v(&[5.0, 0.0]));

        let s = SystemInstance::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::identity(2, 2),
            2.0,
            0.5,
        )
        .unwrap();
        let out = step(&s, &v(&[1.0, 1.0]), &z2, &v(&[0.1, 0.0]), &v(&[0.0, -1.0])).unwrap();
        // hand product: (1+1+0.1, 1-1)
        assert_relative_eq!(out[0], 2.1, epsilon = 1e-15);
        assert_relative_eq!(out[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let s = scalar(1.0);
        let z = v(&[0.0]);
        assert!(matches!(
            step(&s, &v(&[1.0, 2.0]), &z, &z, &z),
            Err(LdsError::Dimension { what: "x", .. })
        ));
    }

    #[test]
    fn prefix_energy_examples() {
        assert_eq!(prefix_energy(&[], 0), 0.0);
        assert_eq!(prefix_energy(&[v(&[3.0, 4.0])], 1), 5.0);
        let vs = [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[1.0, 1.0])];
        assert_relative_eq!(prefix_energy(&vs, 3), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn validation_examples() {
        let ok = SystemInstance::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 1.0, 0.5).unwrap();
        assert!(validate_system(&ok).ok());

        let big_a = SystemInstance::scalar(3.0, 1.0, 2.0, 0.5);
        let r = validate_system(&big_a);
        assert!(!r.a_within_m && r.b_within_m && r.sigma_min_above_l);

        let weak_b = SystemInstance::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.1]),
            1.0,
            0.5,
        )
        .unwrap();
        let r = validate_system(&weak_b);
        assert!(!r.sigma_min_above_l);
        assert_relative_eq!(r.b_sigma_min, 0.1, epsilon = 1e-12);
    }

    fn impulse(d: usize, mag: f64) -> ScriptedDisturbance {
        let mut f = DVector::zeros(d);
        f[0] = mag;
        ScriptedDisturbance { values: vec![f] }
    }

    #[test]
    fn rollout_all_zero() {
        let s = scalar(1.5);
        let traj = rollout(&s, &mut ZeroController { p: 1 }, &mut NoMisspecification, &mut NoDisturbance, 10)
            .unwrap();
        assert_eq!(traj.steps.len(), 11);
        assert!(traj.steps.iter().all(|r| r.x[0] == 0.0 && r.u[0] == 0.0 && r.f[0] == 0.0));
    }

    #[test]
    fn rollout_geometric_decay() {
        let s = scalar(0.5);
        let traj = rollout(&s, &mut ZeroController { p: 1 }, &mut NoMisspecification, &mut impulse(1, 1.0), 6)
            .unwrap();
        let xs: Vec<f64> = traj.steps.iter().map(|r| r.x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]);
    }

    #[test]
    fn rollout_exact_cancellation() {
        let s = scalar(2.0);
        let mut k = LinearFeedback { k: DMatrix::from_element(1, 1, 2.0) };
        let traj = rollout(&s, &mut k, &mut NoMisspecification, &mut impulse(1, 1.0), 5).unwrap();
        let xs: Vec<f64> = traj.steps.iter().map(|r| r.x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rescaling_keeps_exponential_growth_exact() {
        let s = scalar(4.0);
        let traj = rollout(&s, &mut ZeroController { p: 1 }, &mut NoMisspecification, &mut impulse(1, 1.0), 800)
            .unwrap();
        // x_t = 4^{t-1}, so ln‖x_{1:T}‖ = ln sqrt((16^T − 1)/15)
        let t = 800.0;
        let expect = 0.5 * (t * 16f64.ln() - 15f64.ln());
        assert_relative_eq!(traj.ln_prefix_x(800), expect, max_relative = 1e-12);
        assert!(traj.steps[800].scale_log2 > 0);
        for t in 0..800 {
            let next = traj.next_state_in_row_units(t).unwrap();
            let row = &traj.steps[t];
            assert_eq!(next[0], 4.0 * row.x[0] + row.f[0]);
        }
    }

    #[test]
    fn csv_header_and_values() {
        let s = scalar(0.5);
        let traj = rollout(&s, &mut ZeroController { p: 1 }, &mut NoMisspecification, &mut impulse(1, 1.0), 2)
            .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x_0,u_0,w_0,f_0,prefix_x,prefix_f,epoch,phase");
        let row1: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        assert_eq!(row1[0], "1");
        assert_eq!(row1[1].parse::<f64>().unwrap(), 1.0);
        assert_eq!(row1[5].parse::<f64>().unwrap(), 1.0);
    }
}
