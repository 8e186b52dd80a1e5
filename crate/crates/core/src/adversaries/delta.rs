//! Misspecification operators `w_t = Δ_t(x_{1:t})` that spend the budget
//! `Σ‖w_s‖² ≤ h² Σ‖x_s‖²` greedily.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lds::{Misspecification, Observation};
use crate::linalg::{ldexp, random_unit, top_right_singular_vector};

/// Direction rule for the budget-saturating adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaPolicy {
    Zero,
    /// Along `x_t`.
    GreedyAligned,
    /// Along the top right-singular vector of the controller's feedback hint.
    GreedyAntiK,
    /// `w = E x_t`, shrunk to the remaining budget when needed.
    MatrixShift(DMatrix<f64>),
    /// Uniformly random directions from a seeded stream.
    GreedyRandom(u64),
}

#[derive(Debug, Clone)]
pub struct DeltaBudget {
    pub h: f64,
    /// `Σ_{s<t} ‖w_s‖²` in current units.
    pub spent_sq: f64,
    pub policy: DeltaPolicy,
    rng: Option<ChaCha8Rng>,
}

impl DeltaBudget {
    pub fn new(h: f64, policy: DeltaPolicy) -> Self {
        let rng = match &policy {
            DeltaPolicy::GreedyRandom(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        Self { h, spent_sq: 0.0, policy, rng }
    }

    /// Room left at the current prefix, shaved by a few ulps so the running sum
    /// never exceeds `h² Σ‖x‖²` after rounding.
    pub fn remaining(&self, prefix_x: f64) -> f64 {
        let allowed = self.h * self.h * prefix_x * prefix_x;
        ((allowed - self.spent_sq).max(0.0) * (1.0 - 8.0 * f64::EPSILON)).sqrt()
    }
}

fn unit_or_first(v: &DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        let mut e = DVector::zeros(v.len());
        e[0] = 1.0;
        e
    }
}

/// One greedy step: `w_t` of norm equal to the remaining budget along the policy direction.
pub fn greedy_delta(x_t: &DVector<f64>, prefix_x: f64, budget: &mut DeltaBudget, hint: Option<&DMatrix<f64>>) -> DVector<f64> {
    let d = x_t.len();
    if budget.h == 0.0 {
        return DVector::zeros(d);
    }
    let r = budget.remaining(prefix_x);
    let w = match &budget.policy {
        DeltaPolicy::Zero => DVector::zeros(d),
        DeltaPolicy::GreedyAligned => unit_or_first(x_t) * r,
        DeltaPolicy::GreedyAntiK => {
            let dir = hint
                .filter(|k| k.ncols() == d && k.iter().any(|&c| c != 0.0))
                .and_then(top_right_singular_vector)
                .unwrap_or_else(|| unit_or_first(x_t));
            let sign = if dir.dot(x_t) < 0.0 { -1.0 } else { 1.0 };
            dir * (sign * r)
        }
        DeltaPolicy::MatrixShift(e) => {
            let w = e * x_t;
            let n = w.norm();
            if n > r {
                w * (r / n)
            } else {
                w
            }
        }
        DeltaPolicy::GreedyRandom(_) => {
            let rng = budget.rng.as_mut().expect("seeded at construction");
            random_unit(d, rng) * r
        }
    };
    budget.spent_sq += w.norm_squared();
    w
}

impl Misspecification for DeltaBudget {
    fn perturb(&mut self, obs: &Observation<'_>, hint: Option<&DMatrix<f64>>) -> DVector<f64> {
        greedy_delta(obs.x, obs.prefix_x, self, hint)
    }

    fn rescale(&mut self, k: i32) {
        self.spent_sq = ldexp(self.spent_sq, -2 * k);
    }
}

/// `w = [[0, −ε], [0, 0]] x`: together with `A_ε = [[2, ε], [0, 2]]` the plant
/// behaves as `[[2, 0], [0, 2]]`, whose first coordinate no input can reach.
pub fn unstabilizable_delta(x_t: &DVector<f64>, eps: f64) -> DVector<f64> {
    DVector::from_vec(vec![-eps * x_t[1], 0.0])
}

/// The matching plant `A_ε`, `B = (0, 1)ᵀ`.
pub fn unstabilizable_plant(eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::from_row_slice(2, 2, &[2.0, eps, 0.0, 2.0]), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))
}

#[derive(Debug, Clone, Copy)]
pub struct UnstabilizableDelta {
    pub eps: f64,
}

impl Misspecification for UnstabilizableDelta {
    fn perturb(&mut self, obs: &Observation<'_>, _hint: Option<&DMatrix<f64>>) -> DVector<f64> {
        unstabilizable_delta(obs.x, self.eps)
    }
}
