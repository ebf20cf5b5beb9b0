//! End-to-end solve: initial guess, Newton iteration, post-processing.

use thiserror::Error;

use crate::model::{ModelError, OcProblem, Vector};
use crate::residual::{
    assemble, boundary_velocities, objective, recover_multipliers, BlockStructure, DiscreteTrajectory,
    Formulation, Layout, ResidualVector,
};
use crate::scheme::{interval_terms, ControlMode, SchemeParams};
use crate::solver::{initial_guess, newton_solve, GuessStrategy, NonlinearSystem, SolveStats, SolverConfig};

#[derive(Debug, Error)]
pub enum OcpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

/// The optimality residual as a function of the packed unknowns.
pub struct ResidualSystem<'a> {
    pub prob: &'a OcProblem,
    pub params: SchemeParams,
    pub layout: Layout,
    structure: BlockStructure,
}

impl<'a> ResidualSystem<'a> {
    pub fn new(prob: &'a OcProblem, params: SchemeParams, formulation: Formulation) -> Self {
        let layout = Layout::new(prob, &params, formulation);
        let structure = layout.block_structure();
        ResidualSystem {
            prob,
            params,
            layout,
            structure,
        }
    }
}

impl NonlinearSystem for ResidualSystem<'_> {
    fn dim(&self) -> usize {
        self.layout.unknowns()
    }

    fn eval(&self, x: &Vector) -> Vector {
        let traj = self.layout.unpack(x);
        match assemble(self.prob, &self.params, &traj) {
            Ok(r) => r.values,
            Err(_) => Vector::from_element(self.dim(), f64::NAN),
        }
    }

    fn block_structure(&self) -> Option<&BlockStructure> {
        Some(&self.structure)
    }
}

/// Result of [`solve_ocp`]; check `stats.status` before trusting it.
#[derive(Clone, Debug)]
pub struct Solution {
    pub formulation: Formulation,
    pub params: SchemeParams,
    /// Final iterate with recovered `(mu, nu)`.
    pub trajectory: DiscreteTrajectory,
    pub stats: SolveStats,
    pub residual: ResidualVector,
    pub v0_minus: Vector,
    pub vn_plus: Vector,
    pub objective: f64,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.stats.converged()
    }
}

/// Solves the discrete optimality system from a generated initial guess.
pub fn solve_ocp(
    prob: &OcProblem,
    params: &SchemeParams,
    formulation: Formulation,
    guess: GuessStrategy,
    cfg: &SolverConfig,
) -> Result<Solution, OcpError> {
    let start = initial_guess(prob, params, formulation, guess);
    solve_from(prob, params, start, cfg)
}

/// Solves starting from `start`; the formulation is taken from it.
pub fn solve_from(
    prob: &OcProblem,
    params: &SchemeParams,
    start: DiscreteTrajectory,
    cfg: &SolverConfig,
) -> Result<Solution, OcpError> {
    cfg.validate().map_err(OcpError::Config)?;
    let formulation = start.formulation();
    start.validate(prob.state_dim(), prob.control_dim(), params.n_steps)?;
    let sys = ResidualSystem::new(prob, *params, formulation);
    let x0 = sys.layout.pack(&start);
    let (x, stats) = newton_solve(&sys, &x0, cfg);
    let mut trajectory = sys.layout.unpack(&x);
    let residual = assemble(prob, params, &trajectory)?;
    let (mu, nu) = recover_multipliers(prob, params, &trajectory)?;
    trajectory.mu = mu;
    trajectory.nu = nu;
    let (v0_minus, vn_plus) = boundary_velocities(prob, params, &trajectory)?;
    let objective = objective(prob, params, &trajectory)?;
    Ok(Solution {
        formulation,
        params: *params,
        trajectory,
        stats,
        residual,
        v0_minus,
        vn_plus,
        objective,
    })
}

/// Re-expresses `traj` in another formulation.
///
/// Going to the dependent form fills the interval controls with the stage
/// minimisers; going back drops them.
pub fn convert_formulation(
    prob: &OcProblem,
    params: &SchemeParams,
    traj: &DiscreteTrajectory,
    target: Formulation,
) -> Result<DiscreteTrajectory, ModelError> {
    let mut out = traj.clone();
    match target {
        Formulation::Independent => {
            out.u1.clear();
            out.u2.clear();
        }
        Formulation::Dependent if traj.formulation() == Formulation::Dependent => {}
        Formulation::Dependent => {
            out.u1.clear();
            out.u2.clear();
            for k in 0..traj.n_steps() {
                let t = interval_terms(prob.system.as_ref(), &traj.pair(k), ControlMode::Independent, params)?;
                let [s1, s2] = t.stages;
                out.u1.push(s1.control);
                out.u2.push(s2.control);
            }
        }
    }
    Ok(out)
}

/// Step control for [`solve_continuation`].
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuationConfig {
    pub initial_step: f64,
    pub min_step: f64,
    pub growth: f64,
    /// Newton iteration cap for intermediate parameter values.
    pub step_iterations: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            initial_step: 0.125,
            min_step: 1e-4,
            growth: 1.5,
            step_iterations: 30,
        }
    }
}

/// Outcome of a continuation run.
#[derive(Clone, Debug)]
pub struct Continuation {
    /// Last solve attempted.
    pub solution: Solution,
    /// Largest parameter value with a converged solve.
    pub reached: Option<f64>,
    pub accepted_steps: usize,
    pub total_iterations: usize,
}

/// Follows the family `family(s)`, `s` from 0 to 1, from a cold start at `s = 0`.
///
/// Each member is solved from a secant prediction through the two previous
/// solutions; failed steps are halved down to `cont.min_step`.
pub fn solve_continuation<F>(
    family: F,
    params: &SchemeParams,
    formulation: Formulation,
    guess: GuessStrategy,
    cfg: &SolverConfig,
    cont: &ContinuationConfig,
) -> Result<Continuation, OcpError>
where
    F: Fn(f64) -> Result<OcProblem, ModelError>,
{
    if !(cont.initial_step > 0.0 && cont.min_step > 0.0 && cont.growth >= 1.0 && cont.step_iterations > 0) {
        return Err(OcpError::Config(format!("invalid continuation settings {cont:?}")));
    }
    let step_cfg = SolverConfig {
        max_iter: cfg.max_iter.min(cont.step_iterations),
        ..cfg.clone()
    };
    let prob0 = family(0.0)?;
    let mut sol = solve_ocp(&prob0, params, formulation, guess, cfg)?;
    let mut total = sol.stats.iterations;
    if !sol.converged() {
        return Ok(Continuation {
            solution: sol,
            reached: None,
            accepted_steps: 0,
            total_iterations: total,
        });
    }
    let layout = Layout::new(&prob0, params, formulation);
    let mut s = 0.0;
    let mut x = layout.pack(&sol.trajectory);
    let mut prev: Option<(f64, Vector)> = None;
    let mut ds = cont.initial_step.min(1.0);
    let mut accepted = 0;
    loop {
        let s_next = (s + ds).min(1.0);
        let start = match &prev {
            Some((sp, xp)) => &x + (&x - xp) * ((s_next - s) / (s - sp)),
            None => x.clone(),
        };
        let prob = family(s_next)?;
        let c = if s_next >= 1.0 { cfg } else { &step_cfg };
        let attempt = match solve_from(&prob, params, layout.unpack(&start), c) {
            Ok(a) => Some(a),
            Err(OcpError::Model(_)) => None,
            Err(e) => return Err(e),
        };
        if let Some(a) = &attempt {
            total += a.stats.iterations;
        }
        match attempt {
            Some(a) if a.converged() => {
                prev = Some((s, x));
                x = layout.pack(&a.trajectory);
                s = s_next;
                sol = a;
                accepted += 1;
                if s >= 1.0 {
                    break;
                }
                ds *= cont.growth;
            }
            other => {
                if let Some(a) = other {
                    sol = a;
                }
                ds /= 2.0;
                if ds < cont.min_step {
                    break;
                }
            }
        }
    }
    Ok(Continuation {
        solution: sol,
        reached: Some(s),
        accepted_steps: accepted,
        total_iterations: total,
    })
}

impl Continuation {
    pub fn completed(&self) -> bool {
        self.reached == Some(1.0) && self.solution.converged()
    }
}
