//! Exogenous disturbance sources and the `f_script` mini-language.

use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::LdsError;
use crate::lds::{Disturbance, DisturbanceInput, ScriptedDisturbance};
use crate::linalg::random_unit;

/// Parsed `f_script` value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FScript {
    Zero,
    Impulse { t: usize, magnitude: f64 },
    File(String),
    LbGame { a0: f64, gamma0: f64 },
}

impl std::str::FromStr for FScript {
    type Err = LdsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LdsError::InvalidParameter(format!("unrecognized f_script '{s}'"));
        let parts: Vec<&str> = s.trim().splitn(3, ':').collect();
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| bad());
        match parts.as_slice() {
            ["zero"] => Ok(FScript::Zero),
            ["impulse", t, mag] => Ok(FScript::Impulse { t: t.trim().parse().map_err(|_| bad())?, magnitude: num(mag)? }),
            ["file", path] => Ok(FScript::File(path.to_string())),
            ["file", a, b] => Ok(FScript::File(format!("{a}:{b}"))),
            ["lb_game", a0, g0] => {
                let gamma0 = num(g0)?;
                if gamma0 < 1.0 {
                    return Err(LdsError::InvalidParameter("lb_game needs gamma0 >= 1".into()));
                }
                Ok(FScript::LbGame { a0: num(a0)?, gamma0 })
            }
            _ => Err(bad()),
        }
    }
}

/// `f_t = magnitude · e_1` at one time, zero elsewhere.
pub fn impulse(d: usize, t: usize, magnitude: f64) -> ScriptedDisturbance {
    let mut values = vec![DVector::zeros(d); t + 1];
    values[t][0] = magnitude;
    ScriptedDisturbance { values }
}

/// Rows of comma-separated numbers, one `f_t` per row starting at t = 0.
/// A non-numeric first line is taken as a header; `#` starts a comment line.
pub fn parse_disturbance_csv(text: &str, d: usize) -> Result<Vec<DVector<f64>>, LdsError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(vals) if vals.len() == d => out.push(DVector::from_vec(vals)),
            Ok(vals) => return Err(LdsError::Dimension { what: "disturbance row", expected: d, found: vals.len() }),
            Err(_) if out.is_empty() && n == 0 => continue,
            Err(_) => return Err(LdsError::InvalidParameter(format!("non-numeric disturbance row {}", n + 1))),
        }
    }
    Ok(out)
}

pub fn disturbance_from_file(path: &Path, d: usize) -> Result<ScriptedDisturbance, LdsError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LdsError::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
    Ok(ScriptedDisturbance { values: parse_disturbance_csv(&text, d)? })
}

/// Gaussian `f_0 … f_{len−1}` rescaled so that `‖f_{0:len−1}‖₂ = energy`.
pub fn random_energy_script(d: usize, len: usize, energy: f64, seed: u64) -> ScriptedDisturbance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<DVector<f64>> =
        (0..len).map(|_| DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng))).collect();
    let total = values.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v *= energy / total);
    }
    ScriptedDisturbance { values }
}

/// Kicks the plant at t = 0, then again shortly after each new epoch with an
/// impulse proportional to the current state energy, up to `max_impulses` in all.
/// Impulses scale with the state, so the source is homogeneous and needs no rescaling.
#[derive(Debug, Clone)]
pub struct EpochChaser {
    pub initial: f64,
    pub factor: f64,
    pub delay: usize,
    pub max_impulses: usize,
    pub fired: usize,
    last_epoch: usize,
    due: Option<usize>,
    rng: ChaCha8Rng,
}

impl EpochChaser {
    pub fn new(initial: f64, factor: f64, delay: usize, max_impulses: usize, seed: u64) -> Self {
        Self {
            initial,
            factor,
            delay,
            max_impulses,
            fired: 0,
            last_epoch: 0,
            due: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Disturbance for EpochChaser {
    fn next(&mut self, input: &DisturbanceInput<'_>) -> DVector<f64> {
        let d = input.x.len();
        if input.t == 0 {
            if self.max_impulses == 0 {
                return DVector::zeros(d);
            }
            self.fired = 1;
            return random_unit(d, &mut self.rng) * self.initial;
        }
        if let Some(last) = input.history.steps.last() {
            if last.epoch > self.last_epoch {
                self.last_epoch = last.epoch;
                if self.due.is_none() {
                    self.due = Some(input.t + self.delay);
                }
            }
        }
        if self.due == Some(input.t) && self.fired < self.max_impulses {
            self.due = None;
            self.fired += 1;
            return random_unit(d, &mut self.rng) * (self.factor * input.prefix_x);
        }
        DVector::zeros(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_scripts() {
        assert_eq!("zero".parse::<FScript>().unwrap(), FScript::Zero);
        assert_eq!("impulse:3:2.5".parse::<FScript>().unwrap(), FScript::Impulse { t: 3, magnitude: 2.5 });
        assert_eq!("lb_game:1:2".parse::<FScript>().unwrap(), FScript::LbGame { a0: 1.0, gamma0: 2.0 });
        assert_eq!("file:/tmp/f.csv".parse::<FScript>().unwrap(), FScript::File("/tmp/f.csv".into()));
        assert!("lb_game:1:0.5".parse::<FScript>().is_err());
        assert!("impulse:x:1".parse::<FScript>().is_err());
        assert!("wiggle".parse::<FScript>().is_err());
    }

    #[test]
    fn csv_rows() {
        let rows = parse_disturbance_csv("f_0,f_1\n1,2\n# note\n\n3,4\n", 2).unwrap();
        assert_eq!(rows, vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0, 4.0])]);
        assert!(parse_disturbance_csv("1,2,3\n", 2).is_err());
        assert!(parse_disturbance_csv("1,2\nx,y\n", 2).is_err());
    }

    #[test]
    fn exact_energy() {
        let s = random_energy_script(3, 50, 7.0, 1);
        let e: f64 = s.values.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        assert!((e - 7.0).abs() < 1e-12);
    }

    #[test]
    fn impulse_shape() {
        let s = impulse(2, 2, 1.5);
        assert_eq!(s.values.len(), 3);
        assert_eq!(s.values[2][0], 1.5);
        assert_eq!(s.values[0].norm(), 0.0);
    }
}
