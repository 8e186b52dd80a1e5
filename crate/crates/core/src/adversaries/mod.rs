//! Misspecification operators and exogenous disturbance sources.

pub mod delta;
pub mod disturbance;
pub mod lower_bound;

pub use delta::{greedy_delta, unstabilizable_delta, unstabilizable_plant, DeltaBudget, DeltaPolicy, UnstabilizableDelta};
pub use disturbance::{
    disturbance_from_file, impulse, parse_disturbance_csv, random_energy_script, EpochChaser, FScript,
};
pub use lower_bound::{
    close, default_mu, lb_adversary_step, normalized_from_sums, normalized_update, raw_f_from_nu, run_lower_bound,
    sign, trap_interval, validate_game, GameLogEntry, LbGameSource, LowerBoundRun, NormalizedGameState,
};
