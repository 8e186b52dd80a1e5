//! `min_{‖Ã‖₂ ≤ M} max_i ‖Ã v_i − y_i‖₂`.
//!
//! Solved by accelerated projected gradient on a smoothed maximum with the
//! smoothing shrunk geometrically. Every iterate yields a lower bound from weak
//! duality: for weights `λ` in the simplex and unit vectors `s_i`,
//! `Φ* ≥ −Σ λ_i ⟨s_i, y_i⟩ − M ‖Σ λ_i s_i v_iᵀ‖_*`, so the returned gap is certified.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{clip_spectral, nuclear_norm};

#[derive(Debug, Clone, PartialEq)]
pub struct PhiSolution {
    pub a_hat: DMatrix<f64>,
    pub phi: f64,
    /// Certified lower bound on the constrained minimum.
    pub lower_bound: f64,
    pub iterations: usize,
    /// `phi − lower_bound ≤ tol`.
    pub converged: bool,
}

impl PhiSolution {
    pub fn gap(&self) -> f64 {
        (self.phi - self.lower_bound).max(0.0)
    }
}

fn residuals(a: &DMatrix<f64>, v: &[DVector<f64>], y: &[DVector<f64>]) -> Vec<DVector<f64>> {
    v.iter().zip(y).map(|(vi, yi)| a * vi - yi).collect()
}

pub fn phi_value(a: &DMatrix<f64>, v: &[DVector<f64>], y: &[DVector<f64>]) -> f64 {
    residuals(a, v, y).iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// Weak-duality bound for given weights, taking `s_i` along the residuals at `a`.
pub fn phi_lower_bound(a: &DMatrix<f64>, v: &[DVector<f64>], y: &[DVector<f64>], weights: &[f64], m: f64) -> f64 {
    let d = a.nrows();
    let mut g = DMatrix::zeros(d, a.ncols());
    let mut lin = 0.0;
    for ((r, (vi, yi)), &w) in residuals(a, v, y).iter().zip(v.iter().zip(y)).zip(weights) {
        let n = r.norm();
        if n == 0.0 || w == 0.0 {
            continue;
        }
        let s = r / n;
        lin += w * s.dot(yi);
        g += (s * vi.transpose()) * w;
    }
    -lin - m * nuclear_norm(&g)
}

/// Softmax weights of `sqrt(‖r_i‖² + μ²)/μ` and the gradient of the smoothed max.
fn smoothed(a: &DMatrix<f64>, v: &[DVector<f64>], y: &[DVector<f64>], mu: f64) -> (Vec<f64>, DMatrix<f64>) {
    let res = residuals(a, v, y);
    let g: Vec<f64> = res.iter().map(|r| (r.norm_squared() + mu * mu).sqrt()).collect();
    let top = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = g.iter().map(|gi| ((gi - top) / mu).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= total);
    let mut grad = DMatrix::zeros(a.nrows(), a.ncols());
    for ((r, vi), (&wi, &gi)) in res.iter().zip(v).zip(w.iter().zip(&g)) {
        grad += (r * vi.transpose()) * (wi / gi);
    }
    (w, grad)
}

/// Least-squares start `Y Vᵀ (V Vᵀ)⁺`, clipped to the ball.
fn initial_guess(v: &[DVector<f64>], y: &[DVector<f64>], m: f64) -> DMatrix<f64> {
    let vm = DMatrix::from_columns(v);
    let ym = DMatrix::from_columns(y);
    let gram = &vm * vm.transpose();
    let pinv = gram
        .clone()
        .pseudo_inverse(1e-12)
        .unwrap_or_else(|_| DMatrix::zeros(gram.nrows(), gram.ncols()));
    clip_spectral(&(ym * vm.transpose() * pinv), m)
}

pub fn minimize_phi(v: &[DVector<f64>], y: &[DVector<f64>], m: f64, tol: f64, max_iter: usize) -> PhiSolution {
    assert_eq!(v.len(), y.len(), "one target per exploration vector");
    assert!(!v.is_empty(), "exploration set must be non-empty");
    let n = v.len() as f64;
    let mut best = initial_guess(v, y, m);
    let mut best_phi = phi_value(&best, v, y);
    let uniform_active = active_weights(&best, v, y);
    let mut lower = phi_lower_bound(&best, v, y, &uniform_active, m).max(0.0);
    let mut iterations = 0;
    if best_phi - lower <= tol {
        return PhiSolution { a_hat: best, phi: best_phi, lower_bound: lower, iterations, converged: true };
    }

    let mu_floor = tol / (4.0 * (1.0 + n.ln()));
    let mut mu = best_phi.max(tol);
    let mut x = best.clone();
    'outer: while iterations < max_iter {
        let step = mu / 2.0;
        let mut z = x.clone();
        let mut theta = 1.0f64;
        let stage = 200.max((2.0 * (1.0 + n.ln())).ceil() as usize * 50);
        for _ in 0..stage {
            iterations += 1;
            let (w, grad) = smoothed(&z, v, y, mu);
            let x_next = clip_spectral(&(&z - grad * step), m);
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            z = &x_next + (&x_next - &x) * ((theta - 1.0) / theta_next);
            x = x_next;
            theta = theta_next;

            let phi = phi_value(&x, v, y);
            if phi < best_phi {
                best_phi = phi;
                best = x.clone();
            }
            lower = lower.max(phi_lower_bound(&x, v, y, &w, m));
            if best_phi - lower <= tol || iterations >= max_iter {
                break 'outer;
            }
        }
        mu = (mu * 0.3).max(mu_floor);
    }
    PhiSolution {
        converged: best_phi - lower <= tol,
        a_hat: best,
        phi: best_phi,
        lower_bound: lower,
        iterations,
    }
}

/// Uniform weights over residuals attaining the maximum.
fn active_weights(a: &DMatrix<f64>, v: &[DVector<f64>], y: &[DVector<f64>]) -> Vec<f64> {
    let norms: Vec<f64> = residuals(a, v, y).iter().map(|r| r.norm()).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    let active: Vec<bool> = norms.iter().map(|&r| r >= top * (1.0 - 1e-12)).collect();
    let count = active.iter().filter(|&&b| b).count().max(1) as f64;
    active.iter().map(|&b| if b { 1.0 / count } else { 0.0 }).collect()
}
