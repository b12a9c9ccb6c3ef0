//! SDE models and Euler-Maruyama simulation.

mod integrate;
mod model;
pub mod registry;

pub use integrate::{
    exit_ensemble, overshoot_tolerance, sample_snapshots, sample_transition, simulate_exit,
    simulate_exit_indexed, simulate_path, simulate_path_indexed, EmpiricalMeasure, ExitRecord,
    IntegratorConfig, Path, Provenance, DEFAULT_EXIT_BUDGET,
};
pub(crate) use integrate::{grid_time, sample_transition_lane, steps_for, Stepper};
pub use model::{CoefficientBounds, MatrixField, SdeModel, VectorField};
pub(crate) use model::solve_diffusion;
pub use registry::{ModelRegistry, ModelSpec};
