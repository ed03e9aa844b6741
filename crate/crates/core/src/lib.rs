//! P-gradient algorithms for quadratic minimization and their renormalized
//! measure dynamics.
//!
//! A quadratic `f(x) = ½(Ax, x) − (x, y)` is held in its eigenbasis
//! ([`QuadraticProblem`]). A member of the P-gradient family ([`PSpec`]) is
//! run with [`iterate`]; the normalized gradient defines a probability
//! measure on the spectrum whose evolution ([`renorm::transform`]) converges
//! to a two-point cycle ([`attractor`]) with an asymptotic rate fixed by the
//! cycle ([`rates`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attractor;
pub mod error;
pub mod experiments;
pub mod pgradient;
pub mod quadratic;
pub mod rates;
pub mod renorm;

pub use attractor::{AttractorEstimate, StabilityReport};
pub use error::{Error, Result};
pub use pgradient::{iterate, step_length, PSpec, PSpecLabel, RunConfig, Termination, TrajectoryRecord};
pub use experiments::{run_experiment, ExperimentConfig, ExperimentKind};
pub use quadratic::{QuadraticProblem, Spectrum};
pub use rates::RateSummary;
pub use renorm::{Diagnostics, MomentVector, SpectralMeasure};
