//! Ensemble optimal control of ODE systems with uncertain initial data.
//!
//! A problem couples a [`DynamicsModel`] with a random initial state, a
//! shooting plan and a cost. The ensemble of `M` sampled trajectories is
//! propagated in lock step, gradients come from an exact discrete adjoint,
//! and the transcribed NLP is solved with a log-barrier / penalty L-BFGS
//! method. Candidate controls can be checked against the pointwise
//! minimizer of the ensemble Hamiltonian.
//!
//! ```
//! use ensemble_oc::{catalog, ControlSchedule, Overrides, ProblemId};
//!
//! let problem = catalog::build(ProblemId::UgvNominal, &Overrides { dt: Some(0.1), ..Default::default() })?;
//! let transcription = problem.instantiate()?;
//! let zero = ControlSchedule::zeros(&problem.plan, problem.control_dim());
//! let point = transcription.initial_guess(&zero)?;
//! assert_eq!(transcription.evaluate_objective(&point)?, 9.0);
//! # Ok::<(), ensemble_oc::OcError>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod chebyshev;
pub mod ensemble;
pub mod error;
pub mod gradient;
pub mod integrators;
pub mod models;
pub mod optimizer;
pub mod parallel;
pub mod pontryagin;
pub mod problem_file;
pub mod sampling;
pub mod transcription;

pub use catalog::{build, Overrides, ProblemId};
pub use ensemble::{
    ensemble_mean, ensemble_std, grid_times, ControlSchedule, EnsembleState, EnsembleTrajectory, Segment, ShootingPlan,
};
pub use error::{OcError, Result};
pub use gradient::{backward_gradient, fd_gradient, FdStep, SegmentGradient};
pub use integrators::{propagate_segment, step, step_jacobians, SchemeKind, StepJacobians, StepScheme};
pub use models::DynamicsModel;
pub use optimizer::{solve, solve_with_log, SolveReport, SolveStatus, SolverConfig};
pub use parallel::Parallelism;
pub use pontryagin::{verify, OptimalityReport, VerifyConfig};
pub use problem_file::ProblemFile;
pub use sampling::{sample_initial_ensemble, Distribution, RandomInputSpec};
pub use transcription::{Bounds, CostSpec, NlpPoint, OcProblem, PathBound, QuadraticTerm, Transcription};
