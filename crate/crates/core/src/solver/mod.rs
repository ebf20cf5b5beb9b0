//! Damped Newton iteration with finite-difference Jacobians.

pub mod banded;

use log::debug;
use thiserror::Error;

use crate::exec::{map_range, Execution};
use crate::model::{Matrix, OcProblem, Vector};
use crate::residual::{max_norm, BlockStructure, DiscreteTrajectory, Formulation};
use crate::scheme::SchemeParams;

use banded::BandMatrix;

/// Square system `F: R^d -> R^d`.
pub trait NonlinearSystem: Sync {
    fn dim(&self) -> usize;

    /// May return non-finite values where `F` is undefined.
    fn eval(&self, x: &Vector) -> Vector;

    /// Node-block sparsity, if known; enables the banded path.
    fn block_structure(&self) -> Option<&BlockStructure> {
        None
    }
}

/// Adapter for closures.
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&Vector) -> Vector + Sync> NonlinearSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LinearSolver {
    /// Banded when a block structure is available, dense otherwise.
    #[default]
    Auto,
    Dense,
    Banded,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Target for `|F|_inf`.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Backtracking factor.
    pub damping: f64,
    pub min_step: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub linear_solver: LinearSolver,
    /// Measure descent in `|D F|_2` with `D` the inverse Jacobian row norms.
    pub scale_rows: bool,
    pub execution: Execution,
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iter: 200,
            fd_step: 1e-7,
            damping: 0.5,
            min_step: 1e-8,
            armijo: 1e-4,
            linear_solver: LinearSolver::Auto,
            scale_rows: false,
            execution: Execution::default(),
            verbose: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol > 0.0) {
            return Err(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(format!("damping must lie in (0, 1), got {}", self.damping));
        }
        if !(self.fd_step > 0.0) {
            return Err(format!("fd_step must be positive, got {}", self.fd_step));
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(format!("min_step must lie in (0, 1], got {}", self.min_step));
        }
        if self.max_iter == 0 {
            return Err("max_iter must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchStalled,
    SingularJacobian { condition_estimate: f64 },
    NonFinite,
}

impl SolveStatus {
    pub fn describe(&self) -> String {
        match self {
            SolveStatus::Converged => "converged".into(),
            SolveStatus::MaxIterations => "maximum iterations reached".into(),
            SolveStatus::LineSearchStalled => "line search stalled".into(),
            SolveStatus::SingularJacobian { condition_estimate } => {
                format!("singular Jacobian (condition estimate {condition_estimate:.3e})")
            }
            SolveStatus::NonFinite => "non-finite residual".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    /// `|F|_inf` at the returned iterate.
    pub residual_norm: f64,
    /// `|F|_inf` before each iteration and at the end.
    pub residual_history: Vec<f64>,
    /// Accepted step lengths.
    pub step_history: Vec<f64>,
    pub status: SolveStatus,
}

impl SolveStats {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum JacobianError {
    #[error("non-finite residual while perturbing unknown {0}")]
    NonFinite(usize),
}

fn fd_step_for(x: f64, rel: f64) -> f64 {
    let step = rel * (1.0 + x.abs());
    // representable step
    (x + step) - x
}

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Forward-difference Jacobian; column `j` perturbs `x_j` by `fd_step (1 + |x_j|)`.
pub fn fd_jacobian(
    sys: &dyn NonlinearSystem,
    x: &Vector,
    fd_step: f64,
    exec: Execution,
) -> Result<Matrix, JacobianError> {
    let f0 = sys.eval(x);
    fd_jacobian_at(sys, x, &f0, fd_step, exec)
}

fn fd_jacobian_at(
    sys: &dyn NonlinearSystem,
    x: &Vector,
    f0: &Vector,
    fd_step: f64,
    exec: Execution,
) -> Result<Matrix, JacobianError> {
    let d = x.len();
    let cols = map_range(d, exec, |j| {
        let step = fd_step_for(x[j], fd_step);
        let mut xp = x.clone();
        xp[j] += step;
        let fp = sys.eval(&xp);
        if all_finite(&fp) {
            Ok((fp - f0) / step)
        } else {
            Err(JacobianError::NonFinite(j))
        }
    });
    let cols = cols.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::from_columns(&cols))
}

/// Permutation to node-block order and the resulting bandwidths.
#[derive(Clone, Debug)]
pub struct BandedLayout {
    /// Position of each variable in block order.
    pub var_pos: Vec<usize>,
    /// Position of each equation in block order.
    pub eq_pos: Vec<usize>,
    /// Variables of each block, in original index order.
    pub block_vars: Vec<Vec<usize>>,
    /// Equations of each block.
    pub block_eqs: Vec<Vec<usize>>,
    pub kl: usize,
    pub ku: usize,
}

impl BandedLayout {
    pub fn new(s: &BlockStructure) -> Self {
        let nb = s.n_blocks;
        let mut block_vars = vec![Vec::new(); nb];
        for (j, &b) in s.var_block.iter().enumerate() {
            block_vars[b].push(j);
        }
        let mut block_eqs = vec![Vec::new(); nb];
        for (i, &b) in s.eq_block.iter().enumerate() {
            block_eqs[b].push(i);
        }
        let order = |blocks: &[Vec<usize>], len: usize| {
            let mut pos = vec![0usize; len];
            let mut start = Vec::with_capacity(nb + 1);
            let mut next = 0usize;
            for blk in blocks {
                start.push(next);
                for &idx in blk {
                    pos[idx] = next;
                    next += 1;
                }
            }
            start.push(next);
            (pos, start)
        };
        let (var_pos, vstart) = order(&block_vars, s.var_block.len());
        let (eq_pos, estart) = order(&block_eqs, s.eq_block.len());
        let (mut kl, mut ku) = (0usize, 0usize);
        for b in 0..nb {
            if block_eqs[b].is_empty() {
                continue;
            }
            let row_lo = estart[b];
            let row_hi = estart[b + 1] - 1;
            let col_lo = vstart[b.saturating_sub(1)];
            let col_hi = vstart[(b + 2).min(nb)].saturating_sub(1);
            kl = kl.max(row_hi.saturating_sub(col_lo));
            ku = ku.max(col_hi.saturating_sub(row_lo));
        }
        BandedLayout {
            var_pos,
            eq_pos,
            block_vars,
            block_eqs,
            kl,
            ku,
        }
    }

    fn colors(&self) -> Vec<Vec<usize>> {
        let width = self.block_vars.iter().map(Vec::len).max().unwrap_or(0);
        let mut colors = Vec::new();
        for r in 0..3 {
            for l in 0..width {
                let vars: Vec<usize> = self
                    .block_vars
                    .iter()
                    .skip(r)
                    .step_by(3)
                    .filter_map(|b| b.get(l).copied())
                    .collect();
                if !vars.is_empty() {
                    colors.push(vars);
                }
            }
        }
        colors
    }
}

/// Colored forward-difference Jacobian in node-block order.
///
/// Unknowns with the same local index in blocks congruent mod 3 share one
/// evaluation, so the cost is three times the largest block size.
pub fn fd_jacobian_banded(
    sys: &dyn NonlinearSystem,
    structure: &BlockStructure,
    layout: &BandedLayout,
    x: &Vector,
    f0: &Vector,
    fd_step: f64,
    exec: Execution,
) -> Result<BandMatrix, JacobianError> {
    let d = x.len();
    let colors = layout.colors();
    let diffs = map_range(colors.len(), exec, |c| {
        let mut xp = x.clone();
        let mut steps = Vec::with_capacity(colors[c].len());
        for &j in &colors[c] {
            let step = fd_step_for(x[j], fd_step);
            xp[j] += step;
            steps.push(step);
        }
        let fp = sys.eval(&xp);
        if all_finite(&fp) {
            Ok((fp - f0, steps))
        } else {
            Err(JacobianError::NonFinite(colors[c][0]))
        }
    });
    let mut jac = BandMatrix::zeros(d, layout.kl, layout.ku);
    let nb = structure.n_blocks;
    for (c, res) in diffs.into_iter().enumerate() {
        let (diff, steps) = res?;
        for (&j, &step) in colors[c].iter().zip(&steps) {
            let b = structure.var_block[j];
            for eb in b.saturating_sub(1)..=(b + 1).min(nb - 1) {
                for &i in &layout.block_eqs[eb] {
                    jac.set(layout.eq_pos[i], layout.var_pos[j], diff[i] / step);
                }
            }
        }
    }
    Ok(jac)
}

enum Step {
    Ok(Vector, Vector),
    Singular(f64),
    NonFinite,
}

fn row_weights(norms: impl Iterator<Item = f64>) -> Vector {
    let w: Vec<f64> = norms.map(|r| if r > 0.0 { 1.0 / r } else { 1.0 }).collect();
    Vector::from_vec(w)
}

fn dense_step(jac: Matrix, rhs: &Vector) -> Step {
    let weights = row_weights(jac.row_iter().map(|r| r.amax()));
    let lu = jac.lu();
    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..u.nrows() {
        let v = u[(i, i)].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let cond = if lo == 0.0 { f64::INFINITY } else { hi / lo };
    if !(cond < 1e16) {
        return Step::Singular(cond);
    }
    match lu.solve(rhs) {
        Some(dx) if all_finite(&dx) => Step::Ok(dx, weights),
        Some(_) => Step::Singular(cond),
        None => Step::Singular(f64::INFINITY),
    }
}

fn banded_step(jac: BandMatrix, layout: &BandedLayout, rhs: &Vector) -> Step {
    let rows = jac.row_max_abs();
    let weights = row_weights(layout.eq_pos.iter().map(|&p| rows[p]));
    let lu = jac.factor();
    let cond = lu.pivot_ratio();
    if lu.is_singular() || !(cond < 1e16) {
        return Step::Singular(cond);
    }
    let mut b = vec![0.0; rhs.len()];
    for (i, &p) in layout.eq_pos.iter().enumerate() {
        b[p] = rhs[i];
    }
    lu.solve_in_place(&mut b);
    let dx = Vector::from_iterator(rhs.len(), layout.var_pos.iter().map(|&p| b[p]));
    if all_finite(&dx) {
        Step::Ok(dx, weights)
    } else {
        Step::Singular(cond)
    }
}

/// Newton's method with Armijo backtracking on the (optionally row-scaled) 2-norm of `F`.
///
/// Returns the last accepted iterate; on failure this is the best point seen.
pub fn newton_solve(sys: &dyn NonlinearSystem, x0: &Vector, cfg: &SolverConfig) -> (Vector, SolveStats) {
    let structure = match cfg.linear_solver {
        LinearSolver::Dense => None,
        LinearSolver::Auto | LinearSolver::Banded => sys.block_structure(),
    };
    let layout = structure.map(BandedLayout::new);

    let mut x = x0.clone();
    let mut f = sys.eval(&x);
    let mut stats = SolveStats {
        iterations: 0,
        residual_norm: max_norm(&f),
        residual_history: vec![max_norm(&f)],
        step_history: Vec::new(),
        status: SolveStatus::MaxIterations,
    };
    if !all_finite(&f) {
        stats.residual_norm = f64::NAN;
        stats.status = SolveStatus::NonFinite;
        return (x, stats);
    }

    loop {
        let norm_inf = max_norm(&f);
        stats.residual_norm = norm_inf;
        if norm_inf <= cfg.tol {
            stats.status = SolveStatus::Converged;
            break;
        }
        if stats.iterations >= cfg.max_iter {
            stats.status = SolveStatus::MaxIterations;
            break;
        }
        stats.iterations += 1;

        let rhs = -&f;
        let step = match (structure, &layout) {
            (Some(s), Some(l)) => {
                match fd_jacobian_banded(sys, s, l, &x, &f, cfg.fd_step, cfg.execution) {
                    Ok(j) => banded_step(j, l, &rhs),
                    Err(_) => Step::NonFinite,
                }
            }
            _ => match fd_jacobian_at(sys, &x, &f, cfg.fd_step, cfg.execution) {
                Ok(j) => dense_step(j, &rhs),
                Err(_) => Step::NonFinite,
            },
        };
        let (dx, weights) = match step {
            Step::Ok(dx, w) => (dx, if cfg.scale_rows { w } else { Vector::from_element(f.len(), 1.0) }),
            Step::Singular(c) => {
                stats.status = SolveStatus::SingularJacobian {
                    condition_estimate: c,
                };
                break;
            }
            Step::NonFinite => {
                stats.status = SolveStatus::NonFinite;
                break;
            }
        };

        let merit = |r: &Vector| r.component_mul(&weights).norm();
        let norm2 = merit(&f);
        let mut t = 1.0;
        let accepted = loop {
            let xt = &x + &dx * t;
            let ft = sys.eval(&xt);
            if all_finite(&ft) && merit(&ft) <= (1.0 - cfg.armijo * t) * norm2 {
                break Some((xt, ft));
            }
            t *= cfg.damping;
            if t < cfg.min_step {
                break None;
            }
        };
        match accepted {
            Some((xt, ft)) => {
                x = xt;
                f = ft;
                stats.step_history.push(t);
                stats.residual_history.push(max_norm(&f));
                if cfg.verbose {
                    debug!(
                        "newton iteration {}: |F|_inf = {:.3e}, step = {t}",
                        stats.iterations,
                        max_norm(&f)
                    );
                }
            }
            None => {
                stats.status = SolveStatus::LineSearchStalled;
                break;
            }
        }
    }
    (x, stats)
}

/// Starting trajectory for the Newton iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GuessStrategy {
    /// Uncontrolled motion from the initial state, zero costate and controls.
    #[default]
    ZeroCostate,
    /// States interpolated linearly to the target, costate ramped from zero
    /// to the terminal transversality value.
    LinearInterp,
}

fn rk4_step(prob: &OcProblem, q: &Vector, v: &Vector, dt: f64) -> (Vector, Vector) {
    let f = |q: &Vector, v: &Vector| prob.system.drift(q, v);
    let k1q = v.clone();
    let k1v = f(q, v);
    let k2q = v + &k1v * (dt / 2.0);
    let k2v = f(&(q + &k1q * (dt / 2.0)), &k2q);
    let k3q = v + &k2v * (dt / 2.0);
    let k3v = f(&(q + &k2q * (dt / 2.0)), &k3q);
    let k4q = v + &k3v * dt;
    let k4v = f(&(q + &k3q * dt), &k4q);
    (
        q + (k1q + &k2q * 2.0 + &k3q * 2.0 + k4q) * (dt / 6.0),
        v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
    )
}

pub fn initial_guess(
    prob: &OcProblem,
    p: &SchemeParams,
    formulation: Formulation,
    strategy: GuessStrategy,
) -> DiscreteTrajectory {
    let n = prob.state_dim();
    let m = prob.control_dim();
    let nn = p.n_steps;
    let (q, lam) = match strategy {
        GuessStrategy::ZeroCostate => {
            const SUBSTEPS: usize = 4;
            let dt = p.h / SUBSTEPS as f64;
            let mut q = Vec::with_capacity(nn + 1);
            let (mut qk, mut vk) = (prob.q0.clone(), prob.v0.clone());
            q.push(qk.clone());
            for _ in 0..nn {
                for _ in 0..SUBSTEPS {
                    (qk, vk) = rk4_step(prob, &qk, &vk, dt);
                }
                q.push(qk.clone());
            }
            (q, vec![Vector::zeros(n); nn + 1])
        }
        GuessStrategy::LinearInterp => {
            let t_end = p.horizon();
            let (q_end, v_end) = match prob.terminal.target() {
                Some((qt, vt)) => (qt, vt),
                None => (&prob.q0 + &prob.v0 * t_end, prob.v0.clone()),
            };
            let q: Vec<Vector> = (0..=nn)
                .map(|k| {
                    let s = k as f64 / nn as f64;
                    &prob.q0 * (1.0 - s) + &q_end * s
                })
                .collect();
            let lam_end = -prob.terminal.grad_v(&q[nn], &v_end);
            let lam = (0..=nn).map(|k| &lam_end * (k as f64 / nn as f64)).collect();
            (q, lam)
        }
    };
    let (u1, u2) = match formulation {
        Formulation::Independent => (Vec::new(), Vec::new()),
        Formulation::Dependent => (vec![Vector::zeros(m); nn], vec![Vector::zeros(m); nn]),
    };
    DiscreteTrajectory {
        q,
        lam,
        u1,
        u2,
        mu: Vector::zeros(n),
        nu: Vector::zeros(n),
    }
}
