//! Terminal-mass optimization for reaction-advection-diffusion equations
//! `∂ₜu = ∇·(D∇u) + A q·∇u + f(t, x, u)` with zero-flux boundaries.
//!
//! The crate discretizes the problem with cell-centered finite volumes and an
//! IMEX time stepper, computes exact discrete gradients of the terminal mass
//! `I_T(u₀) = ∫u(T)` by an adjoint sweep, and optimizes `I_T` over the set of
//! initial data with values in `[0,1]` and prescribed mass `m`.

pub mod adjoint;
pub mod admissible;
pub mod dual;
pub mod enhancement;
pub mod error;
pub mod expr;
pub mod grid;
pub mod linalg;
pub mod models;
pub mod optimizer;
pub mod solver;

pub use adjoint::{gradient, GradientResult};
pub use admissible::{project_capped_simplex, random_admissible, InitialDatum, MASS_TOL};
pub use enhancement::{
    enhancement_compare, large_a_diagnostic, monotonicity_check, threshold_amplitude,
    EnhanceOptions, EnhancementReport,
};
pub use error::{Error, Result};
pub use expr::Expr;
pub use grid::{build_grid, integrate, Grid, Point, ScalarField};
pub use models::{
    builtin_reaction, validate_field, BoundaryPolicy, DiffusionModel, Diffusivity, FieldReport,
    ReactionModel, VelocityField,
};
pub use optimizer::{
    concavity_probe, maximize, minimize, multistart, ClusterReport, Direction, OptConfig, OptResult,
    StopReason,
};
pub use solver::{
    mass_budget_report, solve_forward, step, terminal_mass, MassBudgetReport, Scenario,
    SolverConfig, Trajectory,
};
