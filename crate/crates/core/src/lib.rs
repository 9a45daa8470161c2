//! Aggregation dynamics `∂ₜρ + ∂ₓ(a(W' * ρ) ρ) = 0` on the line with pointy
//! potentials: a finite-volume scheme, sticky-particle reference dynamics and
//! the Wasserstein-1 distance between discrete measures.

pub mod fv;
pub mod measure;
pub mod particles;
pub mod potentials;

pub use fv::{
    cfl_dt, project_initial, run, step, Bump, FvState, Grid, InitialData, RunConfig, RunOutput,
    SchemeError, VelocityField, VelocityOperator,
};
pub use measure::{wasserstein1, Atom, DiscreteMeasure, MeasureError};
pub use particles::{ParticleError, ParticleSystem, TrajectoryLog};
pub use potentials::{
    BuiltinLaw, BuiltinPotential, Decomposition, Mode, PointyPotential, PotentialError,
    VelocityLaw,
};
