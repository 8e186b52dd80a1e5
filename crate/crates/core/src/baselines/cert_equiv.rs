//! Scalar certainty equivalence: least-squares estimate of `a`, clipped to `[−M, M]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::ControlError;
use crate::lds::{Controller, Observation};
use crate::linalg::ldexp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertEquivState {
    /// `Σ_{s<t} x_s²`.
    pub x_sum: f64,
    /// `Σ_{s<t} x_s (x_{s+1} − u_s)`.
    pub q_sum: f64,
    pub a_hat: f64,
    pub m: f64,
}

impl CertEquivState {
    pub fn new(m: f64) -> Self {
        Self { x_sum: 0.0, q_sum: 0.0, a_hat: 0.0, m }
    }

    /// Least-squares minimizer before clipping; `None` without data.
    pub fn unclipped(&self) -> Option<f64> {
        (self.x_sum > 0.0).then(|| self.q_sum / self.x_sum)
    }
}

/// Absorbs `(x_{t−1}, u_{t−1}, x_t)` and returns `u_t = −â x_t`.
pub fn cert_equiv_step(state: &mut CertEquivState, x_t: f64, x_prev: f64, u_prev: f64) -> f64 {
    state.x_sum += x_prev * x_prev;
    state.q_sum += x_prev * (x_t - u_prev);
    state.a_hat = state.unclipped().map_or(0.0, |a| a.clamp(-state.m, state.m));
    -state.a_hat * x_t
}

/// Certified gain `√(64M² − 8h) / (1 − 2h)^{3/2}` for `h < 1/2`, `M ≥ 1/4`.
pub fn cert_equiv_gain_bound(m: f64, h: f64) -> f64 {
    (64.0 * m * m - 8.0 * h).sqrt() / (1.0 - 2.0 * h).powf(1.5)
}

#[derive(Debug, Clone)]
pub struct CertEquivController {
    pub state: CertEquivState,
    prev: (f64, f64),
}

impl CertEquivController {
    pub fn new(m: f64) -> Self {
        Self { state: CertEquivState::new(m), prev: (0.0, 0.0) }
    }
}

impl Controller for CertEquivController {
    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>, ControlError> {
        if obs.x.len() != 1 {
            return Err(ControlError::Internal("certainty equivalence is scalar only".into()));
        }
        let x = obs.x[0];
        let u = cert_equiv_step(&mut self.state, x, self.prev.0, self.prev.1);
        self.prev = (x, u);
        Ok(DVector::from_element(1, u))
    }

    fn gain_hint(&self) -> Option<nalgebra::DMatrix<f64>> {
        Some(nalgebra::DMatrix::from_element(1, 1, self.state.a_hat))
    }

    fn rescale(&mut self, k: i32) {
        self.state.x_sum = ldexp(self.state.x_sum, -2 * k);
        self.state.q_sum = ldexp(self.state.q_sum, -2 * k);
        self.prev = (ldexp(self.prev.0, -k), ldexp(self.prev.1, -k));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_has_no_data() {
        let mut s = CertEquivState::new(2.0);
        assert_eq!(cert_equiv_step(&mut s, 1.0, 0.0, 0.0), 0.0);
        assert_eq!(s.a_hat, 0.0);
    }

    #[test]
    fn single_sample_is_exact_ratio() {
        let mut s = CertEquivState::new(2.0);
        cert_equiv_step(&mut s, 1.0, 0.0, 0.0);
        let u = cert_equiv_step(&mut s, 2.0, 1.0, 0.0);
        assert_eq!((s.x_sum, s.q_sum, s.a_hat, u), (1.0, 2.0, 2.0, -4.0));
    }

    #[test]
    fn estimate_is_clipped() {
        let mut s = CertEquivState::new(1.5);
        cert_equiv_step(&mut s, 1.0, 0.0, 0.0);
        let u = cert_equiv_step(&mut s, 2.0, 1.0, 0.0);
        assert_eq!((s.a_hat, u), (1.5, -3.0));
        assert_eq!(s.unclipped(), Some(2.0));
    }

    #[test]
    fn bound_at_zero_budget() {
        assert_eq!(cert_equiv_gain_bound(1.0, 0.0), 8.0);
    }
}
