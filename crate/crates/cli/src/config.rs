//! Experiment configuration. Precedence: built-in defaults, then the config
//! file, then command-line flags.

use std::path::{Path, PathBuf};

use lds_robust::Variant;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Random,
    Explicit,
    StronglyStabilizable,
    Unstabilizable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    L2Gain,
    CertEquiv,
    CusumanoPoolla,
    Zero,
    Linear,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DeltaKind {
    Zero,
    GreedyAligned,
    GreedyAntiK,
    GreedyRandom,
    MatrixShift,
    Unstabilizable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderKind {
    Lexicographic,
    Scrambled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub d: usize,
    /// Input dimension, strongly stabilizable instances only.
    pub p: usize,
    pub m: f64,
    pub l: f64,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub kappa: f64,
    pub b_norm: f64,
    /// Coupling of the unstabilizable plant.
    pub eps: f64,
}

impl Default for SystemSpec {
    fn default() -> Self {
        Self {
            kind: SystemKind::Random,
            d: 1,
            p: 1,
            m: 2.0,
            l: 0.5,
            a: None,
            b: None,
            kappa: 2.0,
            b_norm: 1.0,
            eps: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub variant: Variant,
    pub initial_budget: Option<f64>,
    /// Hand the true disturbance norm to the controller (scripted f only).
    pub known_budget: bool,
    /// Feedback for `linear`, as rows of a p×d matrix.
    pub k: Option<Vec<Vec<f64>>>,
    pub kappa: f64,
    pub f_bound: Option<f64>,
    pub order: OrderKind,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            kind: ControllerKind::L2Gain,
            variant: Variant::StandardBasis,
            initial_budget: None,
            known_budget: false,
            k: None,
            kappa: 2.0,
            f_bound: None,
            order: OrderKind::Lexicographic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarySpec {
    pub delta: DeltaKind,
    pub h: f64,
    /// Shift matrix for `matrix_shift`.
    pub matrix: Option<Vec<Vec<f64>>>,
    /// `zero`, `impulse:t:mag`, `file:path`, `lb_game:a0:gamma0`,
    /// `random:len:energy` or `chaser:initial:factor:delay:count`.
    pub f_script: String,
}

impl Default for AdversarySpec {
    fn default() -> Self {
        Self { delta: DeltaKind::Zero, h: 0.0, matrix: None, f_script: "impulse:0:1".into() }
    }
}

/// Axes of a sweep; an empty axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub d: Vec<usize>,
    pub m: Vec<f64>,
    pub l: Vec<f64>,
    pub h: Vec<f64>,
    pub controller: Vec<ControllerKind>,
    pub delta: Vec<DeltaKind>,
    pub f_script: Vec<String>,
    /// Explicit seeds; otherwise `seed .. seed + repetitions`.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowerBoundSpec {
    pub a0: f64,
    /// Plant coefficient; defaults to `a0`.
    pub a: Option<f64>,
    pub m: f64,
    pub gamma0: f64,
    pub mu: Option<f64>,
    pub controller: ControllerKind,
    /// Scalar feedback for the `linear` controller.
    pub k: f64,
    pub h: f64,
}

impl Default for LowerBoundSpec {
    fn default() -> Self {
        Self {
            a0: 0.0,
            a: None,
            m: 2.0,
            gamma0: 1.0,
            mu: None,
            controller: ControllerKind::CertEquiv,
            k: 0.0,
            h: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateSpec {
    pub m: Vec<f64>,
    pub l: Vec<f64>,
    pub d: Vec<usize>,
    /// κ used for the enumeration-controller column.
    pub kappa: f64,
}

impl Default for CertificateSpec {
    fn default() -> Self {
        Self { m: vec![1.0, 2.0, 4.0, 8.0], l: vec![0.25, 0.5, 1.0], d: vec![1, 2, 3], kappa: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub horizon: usize,
    pub repetitions: usize,
    pub out: Option<PathBuf>,
    pub system: SystemSpec,
    pub controller: ControllerSpec,
    pub adversary: AdversarySpec,
    pub sweep: SweepSpec,
    pub lowerbound: LowerBoundSpec,
    pub certificates: CertificateSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: 100,
            repetitions: 1,
            out: None,
            system: SystemSpec::default(),
            controller: ControllerSpec::default(),
            adversary: AdversarySpec::default(),
            sweep: SweepSpec::default(),
            lowerbound: LowerBoundSpec::default(),
            certificates: CertificateSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, CliError> {
        if json {
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad JSON config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| CliError::Config(format!("bad TOML config: {e}")))
        }
    }
}
