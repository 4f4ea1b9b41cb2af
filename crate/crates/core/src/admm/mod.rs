//! Three-block ADMM for flip-free distortion minimization.

mod config;
mod constants;
mod diagnostics;
mod rescale;
mod solver;
mod wstep;

pub use config::{RescaleConfig, SolverConfig, TerminationMode};
pub use constants::{
    c_l, c_lg, f_cap, gradient_bound, lipschitz_f, mu_min, proximal_weight, ConvergenceConstants,
};
pub use diagnostics::{write_csv, DiagnosticsRecord, CSV_HEADER};
pub use rescale::{rescale_due, rescale_element, RescaleSchedule};
pub use solver::{
    augmented_lagrangian, check_termination, compute_errors, solve, AdmmState, ConstraintMailbox, Errors, ExitStatus,
    SolveOutput, Solver,
};
pub use wstep::ConstraintUpdate;
