//! Online control of misspecified linear dynamical systems.
//!
//! The plant is `x_{t+1} = A x_t + B u_t + w_t + f_t`, where `w` is a
//! misspecification bounded by `Σ‖w‖² ≤ h² Σ‖x‖²` and `f` is an arbitrary
//! exogenous disturbance. Controllers are scored by their ℓ₂-gain
//! `‖x_{1:T}‖ / ‖f_{0:T−1}‖`.

pub mod adaptive;
pub mod adversaries;
pub mod baselines;
pub mod error;
pub mod lds;
pub mod linalg;
pub mod metrics;

pub use adaptive::{
    default_parameters, gain_certificate_log, ExplorationSet, EpochState, L2GainConfig, L2GainController, Phase,
    Variant,
};
pub use adversaries::{DeltaBudget, DeltaPolicy, FScript, LbGameSource, NormalizedGameState};
pub use baselines::{CertEquivController, CertEquivState, CpConfig, CusumanoPoolla};
pub use error::{ControlError, LdsError, RolloutError, RolloutFailure};
pub use lds::{
    prefix_energy, rollout, step, validate_system, Controller, Disturbance, LinearFeedback, Misspecification,
    NoDisturbance, NoMisspecification, ScriptedDisturbance, SystemInstance, Trajectory, ZeroController,
};
pub use metrics::{l2_gain, robustness_check, Gain, GainReport, InvariantResult};
pub use nalgebra::{DMatrix, DVector};
