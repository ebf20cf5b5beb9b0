//! Variational low-order discretisations for optimal control of affine-controlled
//! second-order systems with control-quadratic running cost.
//!
//! The optimal control problem is recast as a Lagrangian system on
//! state-costate space. Approximating the exact discrete Lagrangian with the
//! `(alpha, beta, gamma)` family of low-order quadratures yields discrete
//! necessary optimality conditions that are solved here with a damped Newton
//! method. The crate also provides
//!
//! * a control-dependent formulation equivalent to the control-independent one,
//! * KKT-residual oracles for two equivalent direct transcriptions,
//! * Noether integrals, Hamiltonians and empirical convergence-order studies,
//! * a built-in planar low-thrust orbital transfer model.
//!
//! Module map:
//!
//! | module        | contents                                                   |
//! |---------------|------------------------------------------------------------|
//! | [`model`]     | control systems, terminal costs, `b(q)` and derivative checks |
//! | [`scheme`]    | discrete Lagrangians, boundary velocities, discrete momenta |
//! | [`residual`]  | trajectories and the square optimality systems              |
//! | [`solver`]    | damped Newton with finite-difference Jacobians               |
//! | [`direct`]    | direct transcription KKT oracles and variable maps          |
//! | [`diagnostics`] | Noether integrals, Hamiltonians, convergence studies      |
//! | [`kepler`]    | planar low-thrust transfer model                            |
//! | [`ocp`]       | end-to-end solve pipeline                                   |

pub mod diagnostics;
pub mod direct;
pub mod exec;
pub mod fd;
pub mod kepler;
pub mod model;
pub mod ocp;
pub mod residual;
pub mod scheme;
pub mod solver;

pub use model::{
    ControlSystem, LinearSystem, MetricKind, Matrix, ModelError, OcProblem,
    QuadraticTerminalCost, TerminalCost, Vector, ZeroTerminalCost,
};
pub use ocp::{solve_ocp, OcpError, Solution};
pub use residual::{DiscreteTrajectory, Formulation, ResidualVector};
pub use scheme::SchemeParams;
pub use solver::{SolveStats, SolveStatus, SolverConfig};
