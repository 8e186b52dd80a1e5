//! The scalar lower-bound game.
//!
//! With `ξ_t = x_{t+1} − u_t`, `p_t = Σ_{s<t} x_s²`, `q_t = Σ_{s<t} x_s ξ_s`,
//! `r_t = Σ_{s<t} ξ_s²` and, once `p_t > 0`,
//!
//! `β = q/p`, `θ = (r p − q²)/p²`, `z = x/√p`,
//! `δ = (u + β x)/√(p + x²)`, `ν = (ξ − β x)/√(p + x²)`,
//!
//! the normalized state `(z, β, θ)` evolves by
//! `z′ = ν + δ`, `β′ = β + zν/√(1+z²)`, `θ′ = (θ + ν²)/(1+z²)`.
//! The adversary picks `ν` to keep `|z| ≥ 2γ₀` and to trap `β` in
//! `I₀ = [a₀ + (4+μ)γ₀, a₀ + (8+3μ)γ₀]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{LdsError, RolloutFailure};
use crate::lds::{rollout, Controller, Disturbance, DisturbanceInput, Misspecification, SystemInstance, Trajectory};
use crate::linalg::ldexp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedGameState {
    pub z: f64,
    pub beta: f64,
    pub theta: f64,
    pub t0_reached: bool,
}

/// `sign(0) = 1`.
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `(lower, upper, center)` of the trap interval `I₀`.
pub fn trap_interval(a0: f64, gamma0: f64, mu: f64) -> (f64, f64, f64) {
    (a0 + (4.0 + mu) * gamma0, a0 + (8.0 + 3.0 * mu) * gamma0, a0 + (6.0 + 2.0 * mu) * gamma0)
}

/// `μ = min(0.1, 1/(3γ₀²))/2`.
pub fn default_mu(gamma0: f64) -> f64 {
    0.1f64.min(1.0 / (3.0 * gamma0 * gamma0)) / 2.0
}

/// Checks `γ₀ ≥ 1` and `0 < μ < 1/(3γ₀²)`.
pub fn validate_game(gamma0: f64, mu: f64) -> Result<(), LdsError> {
    if !(gamma0 >= 1.0) {
        return Err(LdsError::InvalidParameter(format!("gamma0 must be >= 1, got {gamma0}")));
    }
    if !(mu > 0.0 && mu < 1.0 / (3.0 * gamma0 * gamma0)) {
        return Err(LdsError::InvalidParameter(format!("mu must lie in (0, 1/(3 gamma0^2)), got {mu}")));
    }
    Ok(())
}

/// The adversary's normalized move.
pub fn lb_adversary_step(y: &NormalizedGameState, delta: f64, a0: f64, gamma0: f64, mu: f64) -> f64 {
    let (lo, hi, c0) = trap_interval(a0, gamma0, mu);
    let inside = y.beta >= lo && y.beta <= hi;
    let s = sign(y.z * (y.beta - c0));
    if delta.abs() >= 2.0 * gamma0 && inside {
        0.0
    } else if delta.abs() >= (2.0 + mu) * gamma0 && !inside {
        -mu * gamma0 * s
    } else {
        -(4.0 + mu) * gamma0 * s
    }
}

pub fn normalized_update(y: &NormalizedGameState, delta: f64, nu: f64) -> NormalizedGameState {
    let zz = 1.0 + y.z * y.z;
    NormalizedGameState {
        z: nu + delta,
        beta: y.beta + y.z * nu / zz.sqrt(),
        theta: (y.theta + nu * nu) / zz,
        t0_reached: true,
    }
}

/// Raw disturbance realizing `ν` on the plant `x' = a x + u + f` (no misspecification).
pub fn raw_f_from_nu(nu: f64, beta: f64, a: f64, x_t: f64, p_t: f64) -> f64 {
    nu * (p_t + x_t * x_t).sqrt() + (beta - a) * x_t
}

/// `(z, β, θ)` from the raw sums, valid once `p > 0`.
pub fn normalized_from_sums(x: f64, p: f64, q: f64, r: f64) -> NormalizedGameState {
    let beta = q / p;
    NormalizedGameState { z: x / p.sqrt(), beta, theta: r / p - beta * beta, t0_reached: true }
}

/// Agreement within `tol · max(|a|, |b|, 1)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameLogEntry {
    pub t: usize,
    /// From the raw sums.
    pub direct: NormalizedGameState,
    /// From the recursion started at `t₀`.
    pub recursive: NormalizedGameState,
    pub delta: f64,
    pub nu: f64,
    pub in_trap: bool,
}

/// Plays the adversary as an `f`-source against any scalar controller.
///
/// Before `t₀` it emits `f = 1` (raw). It also cancels the misspecification
/// `w_t`, so the game sees `ξ_t = a x_t + ν`-driven values regardless of `h`.
#[derive(Debug, Clone)]
pub struct LbGameSource {
    pub a: f64,
    pub a0: f64,
    pub gamma0: f64,
    pub mu: f64,
    pub log: Vec<GameLogEntry>,
    p: f64,
    q: f64,
    r: f64,
    prev_x: f64,
    prev_u: f64,
    recursive: Option<NormalizedGameState>,
    pending: Option<(f64, f64)>,
}

impl LbGameSource {
    pub fn new(a: f64, a0: f64, gamma0: f64, mu: f64) -> Result<Self, LdsError> {
        validate_game(gamma0, mu)?;
        Ok(Self {
            a,
            a0,
            gamma0,
            mu,
            log: Vec::new(),
            p: 0.0,
            q: 0.0,
            r: 0.0,
            prev_x: 0.0,
            prev_u: 0.0,
            recursive: None,
            pending: None,
        })
    }

    /// First t at which `β ∈ I₀`, if any.
    pub fn trap_time(&self) -> Option<usize> {
        self.log.iter().find(|e| e.in_trap).map(|e| e.t)
    }

    /// `max_t 1/√((a₀ − β_t)² + θ_t)`: the largest gain at `a₀` the data refutes.
    pub fn refuted_gamma(&self) -> f64 {
        self.log
            .iter()
            .map(|e| 1.0 / ((self.a0 - e.direct.beta).powi(2) + e.direct.theta.max(0.0)).sqrt())
            .fold(0.0, f64::max)
    }
}

impl Disturbance for LbGameSource {
    fn next(&mut self, input: &DisturbanceInput<'_>) -> DVector<f64> {
        let x = input.x[0];
        let u = input.u[0];
        let w = input.w[0];
        let xi_prev = x - self.prev_u;
        self.p += self.prev_x * self.prev_x;
        self.q += self.prev_x * xi_prev;
        self.r += xi_prev * xi_prev;
        self.prev_x = x;
        self.prev_u = u;
        if !(self.p > 0.0) {
            return DVector::from_element(1, ldexp(1.0, -input.scale_log2) - w);
        }
        let direct = normalized_from_sums(x, self.p, self.q, self.r);
        let recursive = match (self.recursive, self.pending) {
            (Some(y), Some((delta, nu))) => normalized_update(&y, delta, nu),
            _ => direct,
        };
        let norm = (self.p + x * x).sqrt();
        let delta = (u + direct.beta * x) / norm;
        let nu = lb_adversary_step(&direct, delta, self.a0, self.gamma0, self.mu);
        let (lo, hi, _) = trap_interval(self.a0, self.gamma0, self.mu);
        self.log.push(GameLogEntry {
            t: input.t,
            direct,
            recursive,
            delta,
            nu,
            in_trap: direct.beta >= lo && direct.beta <= hi,
        });
        self.recursive = Some(recursive);
        self.pending = Some((delta, nu));
        DVector::from_element(1, raw_f_from_nu(nu, direct.beta, self.a, x, self.p) - w)
    }

    fn rescale(&mut self, k: i32) {
        self.p = ldexp(self.p, -2 * k);
        self.q = ldexp(self.q, -2 * k);
        self.r = ldexp(self.r, -2 * k);
        self.prev_x = ldexp(self.prev_x, -k);
        self.prev_u = ldexp(self.prev_u, -k);
    }
}

/// Everything a lower-bound run produces.
#[derive(Debug, Clone)]
pub struct LowerBoundRun {
    pub trajectory: Trajectory,
    pub log: Vec<GameLogEntry>,
    pub trap_time: Option<usize>,
    pub refuted_gamma: f64,
}

/// Scalar plant `x' = a x + u + w + f` with `a = source.a`, driven by the adversary.
pub fn run_lower_bound(
    mut source: LbGameSource,
    m: f64,
    horizon: usize,
    controller: &mut dyn Controller,
    delta: &mut dyn Misspecification,
) -> Result<LowerBoundRun, Box<RolloutFailure>> {
    let sys = SystemInstance::scalar(source.a, 1.0, m, 1.0);
    let trajectory = rollout(&sys, controller, delta, &mut source, horizon)?;
    Ok(LowerBoundRun {
        trap_time: source.trap_time(),
        refuted_gamma: source.refuted_gamma(),
        log: source.log,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn y(z: f64, beta: f64, theta: f64) -> NormalizedGameState {
        NormalizedGameState { z, beta, theta, t0_reached: true }
    }

    #[test]
    fn adversary_branches() {
        let (g, mu, a0) = (1.0, 0.05, 0.0);
        let (lo, hi, c0) = trap_interval(a0, g, mu);
        let inside = 0.5 * (lo + hi);
        assert_eq!(lb_adversary_step(&y(1.0, inside, 0.0), 3.0 * g, a0, g, mu), 0.0);
        assert_eq!(lb_adversary_step(&y(1.0, c0 - 10.0, 0.0), 0.0, a0, g, mu), (4.0 + mu) * g);
        assert_eq!(lb_adversary_step(&y(0.0, c0, 0.0), 0.0, a0, g, mu), -(4.0 + mu) * g);
        assert_eq!(lb_adversary_step(&y(1.0, c0 + 10.0, 0.0), 3.0, a0, g, mu), -mu * g);
    }

    #[test]
    fn update_examples() {
        let n = normalized_update(&y(2.0, 0.3, 1.0), 0.7, 0.0);
        assert_eq!((n.z, n.beta), (0.7, 0.3));
        assert_relative_eq!(n.theta, 0.2);
        assert_eq!(normalized_update(&y(0.0, 0.3, 1.0), 0.5, 2.0).beta, 0.3);
        let n = normalized_update(&y(1.0, 0.0, 1.0), 0.0, 1.0);
        assert_eq!(n.z, 1.0);
        assert_relative_eq!(n.beta, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(n.theta, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn raw_f_examples() {
        assert_eq!(raw_f_from_nu(0.0, 0.4, 0.4, 3.0, 2.0), 0.0);
        assert_eq!(raw_f_from_nu(2.0, 0.4, 0.1, 0.0, 4.0), 4.0);
    }

    #[test]
    fn mu_defaults_and_validation() {
        assert_eq!(default_mu(1.0), 0.05);
        assert!(validate_game(2.0, default_mu(2.0)).is_ok());
        assert!(validate_game(1.0, 0.4).is_err());
        assert!(validate_game(1.0, 0.0).is_err());
        assert!(validate_game(0.5, 0.01).is_err());
    }
}
