//! Enumeration controller: play a candidate feedback until the state energy
//! outgrows `α q`, then discard it and move on to the next.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::ControllerGrid;
use crate::error::{ControlError, LdsError};
use crate::lds::{Controller, ControllerEvent, Observation};
use crate::linalg::ldexp;

/// Order in which grid candidates are tried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrder {
    Lexicographic,
    /// Affine permutation `i ↦ (a·i + c) mod N` with `gcd(a, N) = 1`, drawn from the seed.
    Scrambled(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpConfig {
    pub kappa: f64,
    pub m: f64,
    /// Disturbance bound used as the initial budget.
    pub f_bound: f64,
    pub d: usize,
    pub p: usize,
    pub order: CandidateOrder,
}

/// Net radius `1/(2Mκ²)`.
pub fn cp_net_eps(m: f64, kappa: f64) -> f64 {
    1.0 / (2.0 * m * kappa * kappa)
}

/// `ln` of `(135κ⁵M)^{(4Mκ³√(dp))^{dp}}`.
pub fn cp_gain_bound_log(kappa: f64, m: f64, d: usize, p: usize) -> f64 {
    let dp = (d * p) as f64;
    let exponent = dp * (4.0 * m * kappa.powi(3) * dp.sqrt()).ln();
    exponent.exp() * (135.0 * kappa.powi(5) * m).ln()
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpState {
    pub grid: ControllerGrid,
    pub order: CandidateOrder,
    /// Grid positions consumed so far, in enumeration order.
    pub cursor: u64,
    pub grid_len: u64,
    pub current_k: DMatrix<f64>,
    pub current_index: u64,
    pub q: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub m: f64,
    pub switches: u64,
    pub scale_log2: i32,
    multiplier: u64,
    offset: u64,
}

impl CpState {
    pub fn new(cfg: &CpConfig) -> Result<Self, LdsError> {
        if !(cfg.kappa >= 1.0) || !(cfg.m > 0.0) || !(cfg.f_bound >= 0.0 && cfg.f_bound.is_finite()) {
            return Err(LdsError::InvalidParameter("need kappa >= 1, M > 0, finite F >= 0".into()));
        }
        let grid = ControllerGrid::new(cp_net_eps(cfg.m, cfg.kappa), cfg.kappa, cfg.d, cfg.p)?;
        let grid_len = grid
            .grid_len()
            .ok_or(LdsError::NetTooLarge { size: grid.size_log().exp(), cap: u64::MAX as usize })?;
        let (multiplier, offset) = match cfg.order {
            CandidateOrder::Lexicographic => (1, 0),
            CandidateOrder::Scrambled(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = grid_len as u128;
                let mut a = 1u128;
                if n > 2 {
                    loop {
                        a = rng.gen_range(1..n) as u128;
                        if gcd(a, n) == 1 {
                            break;
                        }
                    }
                }
                (a as u64, rng.gen_range(0..grid_len))
            }
        };
        let mut state = Self {
            current_k: DMatrix::zeros(cfg.p, cfg.d),
            current_index: 0,
            grid,
            order: cfg.order,
            cursor: 0,
            grid_len,
            q: cfg.f_bound,
            alpha: 27.0 * cfg.kappa.powi(4),
            kappa: cfg.kappa,
            m: cfg.m,
            switches: 0,
            scale_log2: 0,
            multiplier,
            offset,
        };
        let (idx, k) = state.next_candidate().map_err(|_| LdsError::InvalidParameter("empty controller net".into()))?;
        state.current_index = idx;
        state.current_k = k;
        Ok(state)
    }

    fn position(&self, k: u64) -> u64 {
        let n = self.grid_len as u128;
        ((self.multiplier as u128 * k as u128 + self.offset as u128) % n) as u64
    }

    fn next_candidate(&mut self) -> Result<(u64, DMatrix<f64>), ControlError> {
        while self.cursor < self.grid_len {
            let idx = self.position(self.cursor);
            self.cursor += 1;
            let k = self.grid.point(idx);
            if self.grid.in_ball(&k) {
                return Ok((idx, k));
            }
        }
        Err(ControlError::Exhausted { switches: self.switches })
    }

    /// Candidates not yet tried, by a full scan of the unvisited grid.
    pub fn remaining(&self) -> u64 {
        (self.cursor..self.grid_len)
            .filter(|&k| self.grid.in_ball(&self.grid.point(self.position(k))))
            .count() as u64
    }

    /// Size of the whole net, by a full scan.
    pub fn net_size(&self) -> u64 {
        (0..self.grid_len).filter(|&i| self.grid.in_ball(&self.grid.point(i))).count() as u64
    }

    pub fn ln_q(&self) -> f64 {
        self.q.ln() + f64::from(self.scale_log2) * std::f64::consts::LN_2
    }

    pub fn rescale(&mut self, k: i32) {
        self.q = ldexp(self.q, -k);
        self.scale_log2 += k;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpSwitch {
    pub q_old: f64,
    pub q_new: f64,
    pub from: u64,
    pub to: u64,
}

/// Plays `−K x_t` with the surviving candidate, switching first if the threshold is crossed.
pub fn cusumano_poolla_step(
    state: &mut CpState,
    x: &DVector<f64>,
    prefix: f64,
) -> Result<(DVector<f64>, Option<CpSwitch>), ControlError> {
    let mut event = None;
    if prefix > state.alpha * state.q {
        let (idx, k) = state.next_candidate()?;
        event = Some(CpSwitch { q_old: state.q, q_new: prefix, from: state.current_index, to: idx });
        state.q = prefix;
        state.current_index = idx;
        state.current_k = k;
        state.switches += 1;
    }
    Ok((-(&state.current_k * x), event))
}

#[derive(Debug, Clone)]
pub struct CusumanoPoolla {
    pub state: CpState,
    /// Times at which a switch happened.
    pub switch_times: Vec<usize>,
    pending: Vec<ControllerEvent>,
}

impl CusumanoPoolla {
    pub fn new(cfg: &CpConfig) -> Result<Self, LdsError> {
        Ok(Self { state: CpState::new(cfg)?, switch_times: Vec::new(), pending: Vec::new() })
    }
}

impl Controller for CusumanoPoolla {
    fn act(&mut self, obs: &Observation<'_>) -> Result<DVector<f64>, ControlError> {
        let scale = f64::from(self.state.scale_log2) * std::f64::consts::LN_2;
        let (u, ev) = cusumano_poolla_step(&mut self.state, obs.x, obs.prefix_x)?;
        if let Some(s) = ev {
            self.switch_times.push(obs.t);
            self.pending.push(ControllerEvent {
                t: obs.t,
                event: "switch".into(),
                ln_q_old: s.q_old.ln() + scale,
                ln_q_new: s.q_new.ln() + scale,
                phase: format!("candidate({})", s.to),
                reason: Some(format!("candidate({})", s.from)),
            });
        }
        Ok(u)
    }

    fn epoch(&self) -> usize {
        self.state.switches as usize
    }

    fn phase(&self) -> String {
        format!("candidate({})", self.state.current_index)
    }

    fn gain_hint(&self) -> Option<DMatrix<f64>> {
        Some(self.state.current_k.clone())
    }

    fn rescale(&mut self, k: i32) {
        self.state.rescale(k);
    }

    fn drain_events(&mut self) -> Vec<ControllerEvent> {
        std::mem::take(&mut self.pending)
    }
}
