//! Covering nets of the unit sphere and of the spectral-norm ball of controllers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::LdsError;
use crate::linalg::spectral_norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereNet {
    pub eps: f64,
    pub vectors: Vec<DVector<f64>>,
}

/// An `eps`-net of the unit sphere in `R^d`.
///
/// A cube grid of spacing `η/√d` is filtered to the shell around the sphere
/// and normalized, which gives an `η`-net. It is then thinned greedily with
/// radius `eps − η`, so the result still covers within `eps`. `η` is the finest
/// of `eps/8`, `eps/4`, `eps/2` whose grid fits under `cap`.
pub fn sphere_net(eps: f64, d: usize, cap: usize) -> Result<SphereNet, LdsError> {
    if !(eps > 0.0) || d == 0 {
        return Err(LdsError::InvalidParameter("need eps > 0 and d >= 1".into()));
    }
    if eps >= 2.0 {
        let mut e = DVector::zeros(d);
        e[0] = 1.0;
        return Ok(SphereNet { eps, vectors: vec![e] });
    }
    if d == 1 {
        return Ok(SphereNet { eps, vectors: vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)] });
    }
    let df = d as f64;
    let mut chosen = None;
    let mut smallest = f64::INFINITY;
    for refine in [8.0, 4.0, 2.0] {
        let eta = eps / refine;
        let s = eta / df.sqrt();
        let half_shell = s * df.sqrt() / 2.0;
        let n = ((1.0 + half_shell) / s).ceil();
        let count = (2.0 * n + 1.0).powi(d as i32);
        smallest = smallest.min(count);
        if count <= cap as f64 {
            chosen = Some((eta, s, half_shell, n as i64));
            break;
        }
    }
    let Some((eta, s, half_shell, n)) = chosen else {
        return Err(LdsError::NetTooLarge { size: smallest, cap });
    };
    let radius = eps - eta;
    let mut kept: Vec<DVector<f64>> = Vec::new();
    let mut idx = vec![-n; d];
    loop {
        let g = DVector::from_iterator(d, idx.iter().map(|&i| i as f64 * s));
        let norm = g.norm();
        if (norm - 1.0).abs() <= half_shell && norm > 0.0 {
            let c = g / norm;
            if kept.iter().all(|k| (k - &c).norm() > radius) {
                kept.push(c);
            }
        }
        // odometer over the grid, last coordinate fastest
        let mut pos = d;
        loop {
            if pos == 0 {
                return Ok(SphereNet { eps, vectors: kept });
            }
            pos -= 1;
            if idx[pos] < n {
                idx[pos] += 1;
                break;
            }
            idx[pos] = -n;
        }
    }
}

/// Axis-aligned grid over `[−κ, κ]^{p·d}` restricted to `‖K‖₂ ≤ κ`.
///
/// With spacing at most `eps/√(pd)` the in-ball grid points alone are an
/// `eps`-net of the ball: shrink any `K` toward 0 by `eps/2` in spectral norm,
/// and its nearest grid point (Frobenius distance ≤ `eps/2`) lies in the ball.
/// Points are indexed lexicographically, first entry most significant, so large
/// nets can be enumerated without being stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGrid {
    pub eps: f64,
    pub kappa: f64,
    pub p: usize,
    pub d: usize,
    pub points_per_axis: u64,
}

impl ControllerGrid {
    pub fn new(eps: f64, kappa: f64, d: usize, p: usize) -> Result<Self, LdsError> {
        if !(eps > 0.0 && kappa > 0.0) || d == 0 || p == 0 {
            return Err(LdsError::InvalidParameter("need eps > 0, kappa > 0, d, p >= 1".into()));
        }
        let per_axis = (2.0 * kappa * ((d * p) as f64).sqrt() / eps).ceil() + 1.0;
        if per_axis > 1e15 {
            return Err(LdsError::NetTooLarge { size: per_axis, cap: usize::MAX });
        }
        Ok(Self { eps, kappa, p, d, points_per_axis: per_axis as u64 })
    }

    pub fn coordinates(&self) -> usize {
        self.p * self.d
    }

    /// Total grid points (before the ball filter), if it fits in `u64`.
    pub fn grid_len(&self) -> Option<u64> {
        self.points_per_axis.checked_pow(self.coordinates() as u32)
    }

    /// `ln` of the grid point count; an upper bound on the net size.
    pub fn size_log(&self) -> f64 {
        self.coordinates() as f64 * (self.points_per_axis as f64).ln()
    }

    fn value(&self, i: u64) -> f64 {
        let n = self.points_per_axis;
        if n == 1 {
            return 0.0;
        }
        -self.kappa + 2.0 * self.kappa * i as f64 / (n - 1) as f64
    }

    /// Grid point with the given lexicographic index, as a p×d matrix.
    pub fn point(&self, index: u64) -> DMatrix<f64> {
        let c = self.coordinates();
        let n = self.points_per_axis;
        let mut digits = vec![0u64; c];
        let mut rem = index;
        for slot in digits.iter_mut().rev() {
            *slot = rem % n;
            rem /= n;
        }
        DMatrix::from_row_iterator(self.p, self.d, digits.iter().map(|&i| self.value(i)))
    }

    pub fn in_ball(&self, k: &DMatrix<f64>) -> bool {
        spectral_norm(k) <= self.kappa
    }

    /// Grid points with `‖K‖_F` safely below `κ`. Those are all in the net, so
    /// this is a lower bound on its size that avoids one SVD per grid point.
    pub fn frobenius_ball_count(&self) -> u64 {
        let c = self.coordinates();
        let n = self.points_per_axis;
        let limit = self.kappa * self.kappa * (1.0 - 1e-9);
        let squares: Vec<f64> = (0..n).map(|i| self.value(i).powi(2)).collect();
        // sorted copy of the last coordinate's squares for counting by bisection
        let mut last = squares.clone();
        last.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut idx = vec![0u64; c.saturating_sub(1)];
        let mut total = 0u64;
        loop {
            let partial: f64 = idx.iter().map(|&i| squares[i as usize]).sum();
            if partial <= limit {
                total += last.partition_point(|&s| partial + s <= limit) as u64;
            }
            let mut pos = idx.len();
            loop {
                if pos == 0 {
                    return total;
                }
                pos -= 1;
                if idx[pos] + 1 < n {
                    idx[pos] += 1;
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
}

/// Materialized controller net in lexicographic order.
pub fn controller_grid_net(eps: f64, kappa: f64, d: usize, p: usize, cap: usize) -> Result<Vec<DMatrix<f64>>, LdsError> {
    let grid = ControllerGrid::new(eps, kappa, d, p)?;
    let len = match grid.grid_len() {
        Some(n) if n <= cap as u64 => n,
        _ => return Err(LdsError::NetTooLarge { size: grid.size_log().exp(), cap }),
    };
    Ok((0..len).map(|i| grid.point(i)).filter(|k| grid.in_ball(k)).collect())
}
