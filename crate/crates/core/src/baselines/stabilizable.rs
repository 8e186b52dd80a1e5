//! Strongly stabilizable instances: `A + B K* = H Λ H⁻¹` with `‖K*‖ ≤ κ`,
//! `‖H‖, ‖H⁻¹‖, cond(H) ≤ κ` and `‖Λ‖ ≤ 1 − 1/κ`.
//!
//! The closed loop under `u = −K x` is `A − B K`, so the feedback that realizes
//! the certificate is `K = −K*`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::LdsError;
use crate::lds::SystemInstance;
use crate::linalg::{random_orthogonal, sigma_min, spectral_norm, with_singular_values};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizabilityCertificate {
    /// `K*` with `A + B K* = H Λ H⁻¹`.
    pub k: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub kappa: f64,
}

impl StabilizabilityCertificate {
    /// Feedback for `u = −K x`.
    pub fn feedback(&self) -> DMatrix<f64> {
        -&self.k
    }
}

/// `A = H Λ H⁻¹ − B K*`.
pub fn assemble_instance(h: &DMatrix<f64>, lambda: &DMatrix<f64>, k: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let h_inv = h.clone().try_inverse()?;
    Some(h * lambda * h_inv - b * k)
}

/// Random κ-strongly stabilizable `(A, B)` with `B` of shape d×p and `‖B‖ = b_norm`.
pub fn make_strongly_stabilizable_instance(
    kappa: f64,
    d: usize,
    p: usize,
    b_norm: f64,
    seed: u64,
) -> Result<(SystemInstance, StabilizabilityCertificate), LdsError> {
    if !(kappa >= 1.0) || d == 0 || p == 0 || !(b_norm > 0.0) {
        return Err(LdsError::InvalidParameter("need kappa >= 1, d, p >= 1, b_norm > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // singular values of H in [1, κ] keep ‖H‖, ‖H⁻¹‖ and cond(H) all ≤ κ
    let mut s: Vec<f64> = (0..d).map(|_| rng.gen_range(1.0..=kappa)).collect();
    s[0] = kappa;
    let u = random_orthogonal(d, &mut rng);
    let v = random_orthogonal(d, &mut rng);
    let h = &u * DMatrix::from_diagonal(&DVector::from_vec(s)) * v.transpose();
    let rho = 1.0 - 1.0 / kappa;
    let lambda = DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| if rng.gen_bool(0.5) { rho } else { -rho }));
    let k_sv: Vec<f64> = (0..d.min(p)).map(|_| rng.gen_range(0.0..=kappa)).collect();
    let k = with_singular_values(p, d, &k_sv, &mut rng);
    let mut b_sv: Vec<f64> = (0..d.min(p)).map(|_| rng.gen_range(0.1 * b_norm..=b_norm)).collect();
    b_sv[0] = b_norm;
    let b = with_singular_values(d, p, &b_sv, &mut rng);
    let a = assemble_instance(&h, &lambda, &k, &b).expect("H has singular values >= 1");
    let m = 1f64.max(spectral_norm(&a)).max(spectral_norm(&b));
    let l = sigma_min(&b).clamp(f64::MIN_POSITIVE, 1.0);
    let sys = SystemInstance::new(a, b, m, l)?;
    Ok((sys, StabilizabilityCertificate { k, h, lambda, kappa }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizabilityCheck {
    pub name: String,
    pub pass: bool,
    /// Bound minus measured value; negative on failure.
    pub margin: f64,
}

/// Checks every condition of the certificate against `(A, B)`.
pub fn verify_strong_stabilizability(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    h: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    kappa: f64,
) -> Vec<StabilizabilityCheck> {
    let mut out = Vec::new();
    let mut check = |name: &str, bound: f64, value: f64| {
        out.push(StabilizabilityCheck { name: name.into(), pass: value <= bound, margin: bound - value });
    };
    let tol = 1e-9;
    check("k_norm", kappa * (1.0 + tol), spectral_norm(k));
    check("lambda_norm", (1.0 - 1.0 / kappa) * (1.0 + tol) + tol, spectral_norm(lambda));
    let h_norm = spectral_norm(h);
    check("h_norm", kappa * (1.0 + tol), h_norm);
    match h.clone().try_inverse().filter(|_| sigma_min(h) > 0.0) {
        Some(h_inv) => {
            let inv_norm = spectral_norm(&h_inv);
            check("h_inv_norm", kappa * (1.0 + tol), inv_norm);
            check("h_condition", kappa * (1.0 + tol), h_norm * inv_norm);
            let closed = a + b * k;
            let target = h * lambda * h_inv;
            let scale = spectral_norm(&target).max(spectral_norm(&closed)).max(1.0);
            check("closed_loop", tol, spectral_norm(&(closed - target)) / scale);
        }
        None => {
            for name in ["h_inv_norm", "h_condition", "closed_loop"] {
                check(name, 0.0, f64::INFINITY);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_pass(checks: &[StabilizabilityCheck]) -> bool {
        checks.iter().all(|c| c.pass)
    }

    fn m(r: usize, c: usize, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, xs)
    }

    #[test]
    fn scalar_hand_assembly() {
        let a = assemble_instance(&m(1, 1, &[1.0]), &m(1, 1, &[0.5]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0])).unwrap();
        assert_eq!(a[(0, 0)], -0.5);
    }

    #[test]
    fn generated_instances_verify() {
        for seed in 0..20 {
            for (kappa, d, p) in [(1.0, 2, 2), (2.0, 2, 2), (3.0, 3, 1), (2.0, 1, 3)] {
                let (sys, c) = make_strongly_stabilizable_instance(kappa, d, p, 1.0, seed).unwrap();
                let checks = verify_strong_stabilizability(&sys.a, &sys.b, &c.k, &c.h, &c.lambda, c.kappa);
                assert!(all_pass(&checks), "{checks:?}");
                assert_eq!(sys.b.shape(), (d, p));
            }
        }
    }

    #[test]
    fn deadbeat_when_kappa_is_one() {
        let (sys, c) = make_strongly_stabilizable_instance(1.0, 2, 2, 1.0, 4).unwrap();
        assert!(c.lambda.iter().all(|&v| v == 0.0));
        let closed = &sys.a - &sys.b * c.feedback();
        assert!(spectral_norm(&closed) < 1e-12);
    }

    #[test]
    fn violations_are_reported() {
        let eye = DMatrix::identity(2, 2);
        let lam = &eye * 0.1;
        let a = -&eye + &lam;
        let checks = verify_strong_stabilizability(&a, &eye, &eye, &eye, &lam, 1.0);
        assert!(checks.iter().any(|c| c.name == "lambda_norm" && !c.pass));

        let k = &eye * 4.0;
        let a = -&k;
        let checks = verify_strong_stabilizability(&a, &eye, &k, &eye, &DMatrix::zeros(2, 2), 2.0);
        assert!(checks.iter().any(|c| c.name == "k_norm" && !c.pass));

        let h = m(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let checks = verify_strong_stabilizability(&eye, &eye, &eye, &h, &DMatrix::zeros(2, 2), 2.0);
        assert!(checks.iter().any(|c| c.name == "closed_loop" && !c.pass));
    }
}
