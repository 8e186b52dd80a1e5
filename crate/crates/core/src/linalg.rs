//! Small dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Largest singular value. Zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest singular value of a matrix with at least as many rows as columns.
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().min()
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().sum()
}

/// Euclidean projection onto the spectral-norm ball of radius `radius`:
/// singular values above the radius are truncated to it.
pub fn clip_spectral(m: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let mut svd = m.clone().svd(true, true);
    if svd.singular_values.max() <= radius {
        return m.clone();
    }
    for s in svd.singular_values.iter_mut() {
        if *s > radius {
            *s = radius;
        }
    }
    svd.recompose().expect("both factors requested")
}

/// Right singular vector for the largest singular value.
pub fn top_right_singular_vector(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    if m.is_empty() {
        return None;
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
    Some(v_t.row(idx).transpose())
}

/// Solves `lhs * X = rhs` by LU with partial pivoting.
pub fn solve(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    lhs.clone().lu().solve(rhs)
}

/// Multiplies by `2^k` exactly (barring underflow), for exponents beyond `i32` powi range safety.
pub fn ldexp(value: f64, k: i32) -> f64 {
    let mut v = value;
    let mut k = k;
    while k > 1000 {
        v *= 2f64.powi(1000);
        k -= 1000;
    }
    while k < -1000 {
        v *= 2f64.powi(-1000);
        k += 1000;
    }
    v * 2f64.powi(k)
}

/// `ln(exp(a) + exp(b))` without overflow; handles `-inf` operands.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Haar-random orthogonal matrix via QR of a Gaussian matrix with sign correction.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `U diag(s) V^T` with Haar-random `U` (rows×rows) and `V` (cols×cols).
pub fn with_singular_values<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    s: &[f64],
    rng: &mut R,
) -> DMatrix<f64> {
    let u = random_orthogonal(rows, rng);
    let v = random_orthogonal(cols, rng);
    let mut sigma = DMatrix::zeros(rows, cols);
    for (i, &val) in s.iter().enumerate().take(rows.min(cols)) {
        sigma[(i, i)] = val;
    }
    u * sigma * v.transpose()
}

/// Uniformly random unit vector.
pub fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 1e-12 {
            return g / norm;
        }
    }
}
