//! Discrete necessary optimality conditions as a square nonlinear system.

use crate::model::{ModelError, OcProblem, Vector};
use crate::scheme::{interval_terms, ControlMode, IntervalControls, IntervalTerms, NodePair, SchemeParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Formulation {
    /// Controls eliminated through the minimisation condition.
    Independent,
    /// Interval controls `U1`, `U2` carried as unknowns.
    Dependent,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::Independent => "independent",
            Formulation::Dependent => "dependent",
        }
    }
}

/// Nodal states and costates, interval controls and boundary multipliers.
///
/// `u1` and `u2` are empty for the independent formulation.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTrajectory {
    pub q: Vec<Vector>,
    pub lam: Vec<Vector>,
    pub u1: Vec<Vector>,
    pub u2: Vec<Vector>,
    pub mu: Vector,
    pub nu: Vector,
}

impl DiscreteTrajectory {
    pub fn n_steps(&self) -> usize {
        self.q.len().saturating_sub(1)
    }

    pub fn formulation(&self) -> Formulation {
        if self.u1.is_empty() {
            Formulation::Independent
        } else {
            Formulation::Dependent
        }
    }

    pub fn pair(&self, k: usize) -> NodePair<'_> {
        NodePair {
            q_k: &self.q[k],
            lam_k: &self.lam[k],
            q_k1: &self.q[k + 1],
            lam_k1: &self.lam[k + 1],
        }
    }

    pub fn controls(&self, k: usize) -> Option<IntervalControls<'_>> {
        if self.u1.is_empty() {
            None
        } else {
            Some(IntervalControls {
                u1: &self.u1[k],
                u2: &self.u2[k],
            })
        }
    }

    pub fn mode(&self, k: usize) -> ControlMode<'_> {
        match self.controls(k) {
            Some(c) => ControlMode::Dependent(c),
            None => ControlMode::Independent,
        }
    }

    /// Checks lengths and finiteness against `(n, m, N)`.
    pub fn validate(&self, n: usize, m: usize, n_steps: usize) -> Result<(), ModelError> {
        let check = |what: &'static str, got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(ModelError::Dimension { what, expected, got })
            }
        };
        check("state nodes", self.q.len(), n_steps + 1)?;
        check("costate nodes", self.lam.len(), n_steps + 1)?;
        if !self.u1.is_empty() || !self.u2.is_empty() {
            check("first controls", self.u1.len(), n_steps)?;
            check("second controls", self.u2.len(), n_steps)?;
        }
        for x in self.q.iter().chain(&self.lam) {
            check("state vector", x.len(), n)?;
        }
        for x in self.u1.iter().chain(&self.u2) {
            check("control vector", x.len(), m)?;
        }
        let finite = self
            .q
            .iter()
            .chain(&self.lam)
            .chain(&self.u1)
            .chain(&self.u2)
            .all(|x| x.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(ModelError::Invalid("trajectory contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Named contiguous block of a residual.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
}

/// Concatenated equation blocks with their index map.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualVector {
    pub values: Vector,
    pub blocks: Vec<Block>,
}

impl ResidualVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| &self.values.as_slice()[b.offset..b.offset + b.len])
    }

    /// Max-norm; NaN if any entry is NaN.
    pub fn max_norm(&self) -> f64 {
        max_norm(&self.values)
    }

    pub fn block_max_norm(&self, name: &str) -> Option<f64> {
        self.block(name)
            .map(|b| b.iter().fold(0.0, |a: f64, x| if x.is_nan() { f64::NAN } else { a.max(x.abs()) }))
    }
}

pub(crate) fn max_norm(v: &Vector) -> f64 {
    let mut m: f64 = 0.0;
    for x in v.iter() {
        if x.is_nan() {
            return f64::NAN;
        }
        m = m.max(x.abs());
    }
    m
}

pub(crate) struct Builder {
    values: Vec<f64>,
    blocks: Vec<Block>,
}

impl Builder {
    pub(crate) fn new(capacity: usize) -> Self {
        Builder {
            values: Vec::with_capacity(capacity),
            blocks: Vec::new(),
        }
    }

    pub(crate) fn push<'a>(&mut self, name: &'static str, parts: impl IntoIterator<Item = &'a Vector>) {
        let offset = self.values.len();
        for p in parts {
            self.values.extend_from_slice(p.as_slice());
        }
        self.blocks.push(Block {
            name,
            offset,
            len: self.values.len() - offset,
        });
    }

    pub(crate) fn finish(self) -> ResidualVector {
        ResidualVector {
            values: Vector::from_vec(self.values),
            blocks: self.blocks,
        }
    }
}

/// Placement of unknowns in the flat vector.
///
/// `[q_0..q_N, lambda_0..lambda_N]`, followed by `[U1_0..U1_{N-1}, U2_0..U2_{N-1}]`
/// in the dependent case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub n_steps: usize,
    pub formulation: Formulation,
}

impl Layout {
    pub fn new(prob: &OcProblem, p: &SchemeParams, formulation: Formulation) -> Self {
        Layout {
            n: prob.state_dim(),
            m: prob.control_dim(),
            n_steps: p.n_steps,
            formulation,
        }
    }

    pub fn unknowns(&self) -> usize {
        let base = 2 * self.n * (self.n_steps + 1);
        match self.formulation {
            Formulation::Independent => base,
            Formulation::Dependent => base + 2 * self.m * self.n_steps,
        }
    }

    pub fn q_offset(&self, k: usize) -> usize {
        k * self.n
    }

    pub fn lam_offset(&self, k: usize) -> usize {
        (self.n_steps + 1 + k) * self.n
    }

    pub fn u1_offset(&self, k: usize) -> usize {
        2 * self.n * (self.n_steps + 1) + k * self.m
    }

    pub fn u2_offset(&self, k: usize) -> usize {
        2 * self.n * (self.n_steps + 1) + (self.n_steps + k) * self.m
    }

    pub fn pack(&self, traj: &DiscreteTrajectory) -> Vector {
        let mut x = Vec::with_capacity(self.unknowns());
        for v in traj.q.iter().chain(&traj.lam) {
            x.extend_from_slice(v.as_slice());
        }
        if self.formulation == Formulation::Dependent {
            for v in traj.u1.iter().chain(&traj.u2) {
                x.extend_from_slice(v.as_slice());
            }
        }
        Vector::from_vec(x)
    }

    /// Inverse of [`Layout::pack`]; multipliers are left at zero.
    pub fn unpack(&self, x: &Vector) -> DiscreteTrajectory {
        let (n, m, nn) = (self.n, self.m, self.n_steps);
        let seg = |off: usize, len: usize| Vector::from_column_slice(&x.as_slice()[off..off + len]);
        let q = (0..=nn).map(|k| seg(self.q_offset(k), n)).collect();
        let lam = (0..=nn).map(|k| seg(self.lam_offset(k), n)).collect();
        let (u1, u2) = match self.formulation {
            Formulation::Independent => (Vec::new(), Vec::new()),
            Formulation::Dependent => (
                (0..nn).map(|k| seg(self.u1_offset(k), m)).collect(),
                (0..nn).map(|k| seg(self.u2_offset(k), m)).collect(),
            ),
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

    /// Node-block assignment of unknowns and equations.
    ///
    /// `U_k` belongs to block `k`; block 0 holds the initial conditions and
    /// block `N` the terminal ones. Equations of block `k` only involve
    /// unknowns of blocks `k-1..=k+1`.
    pub fn block_structure(&self) -> BlockStructure {
        let (n, m, nn) = (self.n, self.m, self.n_steps);
        let dep = self.formulation == Formulation::Dependent;
        let mut var_block = vec![0; self.unknowns()];
        for k in 0..=nn {
            for i in 0..n {
                var_block[self.q_offset(k) + i] = k;
                var_block[self.lam_offset(k) + i] = k;
            }
            if dep && k < nn {
                for i in 0..m {
                    var_block[self.u1_offset(k) + i] = k;
                    var_block[self.u2_offset(k) + i] = k;
                }
            }
        }
        let mut eq_block = Vec::with_capacity(self.unknowns());
        let interior = nn - 1;
        // a, b
        for _ in 0..2 {
            for k in 1..=interior {
                eq_block.extend(std::iter::repeat_n(k, n));
            }
        }
        if dep {
            for _ in 0..2 {
                for k in 0..nn {
                    eq_block.extend(std::iter::repeat_n(k, m));
                }
            }
        }
        // initial position and velocity
        eq_block.extend(std::iter::repeat_n(0, 2 * n));
        // terminal conditions
        eq_block.extend(std::iter::repeat_n(nn, 2 * n));
        BlockStructure {
            n_blocks: nn + 1,
            var_block,
            eq_block,
        }
    }
}

/// Assignment of unknowns and equations to node blocks; equations of block
/// `b` depend only on unknowns of blocks `b-1..=b+1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockStructure {
    pub n_blocks: usize,
    pub var_block: Vec<usize>,
    pub eq_block: Vec<usize>,
}

fn check_inputs(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
    formulation: Formulation,
) -> Result<(), ModelError> {
    traj.validate(prob.state_dim(), prob.control_dim(), p.n_steps)?;
    if traj.formulation() != formulation {
        return Err(ModelError::Invalid(format!(
            "trajectory does not match the {} formulation",
            formulation.name()
        )));
    }
    Ok(())
}

pub(crate) fn all_terms(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
) -> Result<Vec<IntervalTerms>, ModelError> {
    (0..p.n_steps)
        .map(|k| interval_terms(prob.system.as_ref(), &traj.pair(k), traj.mode(k), p))
        .collect()
}

fn assemble_from_terms(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
    terms: &[IntervalTerms],
) -> ResidualVector {
    let nn = p.n_steps;
    let h = p.h;
    let n = prob.state_dim();
    let m = prob.control_dim();
    let dep = traj.formulation() == Formulation::Dependent;
    let mut out = Builder::new(2 * n * (nn + 1) + if dep { 2 * m * nn } else { 0 });

    let a: Vec<Vector> = (1..nn)
        .map(|k| (terms[k].velocity_minus() - terms[k - 1].velocity_plus()) / h)
        .collect();
    out.push("state", &a);
    let b: Vec<Vector> = (1..nn)
        .map(|k| (terms[k].q_momentum_minus() - terms[k - 1].q_momentum_plus()) / h)
        .collect();
    out.push("costate", &b);

    if dep {
        let min1: Vec<Vector> = terms
            .iter()
            .map(|t| t.stages[0].min_residual.clone().expect("dependent terms"))
            .collect();
        out.push("minimisation_1", &min1);
        let min2: Vec<Vector> = terms
            .iter()
            .map(|t| t.stages[1].min_residual.clone().expect("dependent terms"))
            .collect();
        out.push("minimisation_2", &min2);
    }

    let init_q = &traj.q[0] - &prob.q0;
    out.push("initial_position", [&init_q]);
    let init_v = terms[0].velocity_minus() - &prob.v0;
    out.push("initial_velocity", [&init_v]);

    let q_n = &traj.q[nn];
    let v_n = terms[nn - 1].velocity_plus();
    let term_q = prob.terminal.grad_q(q_n, &v_n) - terms[nn - 1].q_momentum_plus();
    out.push("terminal_position", [&term_q]);
    let term_v = &traj.lam[nn] + prob.terminal.grad_v(q_n, &v_n);
    out.push("terminal_costate", [&term_v]);

    out.finish()
}

/// Optimality residual with controls eliminated; length `2n(N+1)`.
pub fn assemble_indep(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
) -> Result<ResidualVector, ModelError> {
    check_inputs(prob, p, traj, Formulation::Independent)?;
    let terms = all_terms(prob, p, traj)?;
    Ok(assemble_from_terms(prob, p, traj, &terms))
}

/// Optimality residual with explicit controls; length `2n(N+1) + 2mN`.
pub fn assemble_dep(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
) -> Result<ResidualVector, ModelError> {
    check_inputs(prob, p, traj, Formulation::Dependent)?;
    let terms = all_terms(prob, p, traj)?;
    Ok(assemble_from_terms(prob, p, traj, &terms))
}

pub fn assemble(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
) -> Result<ResidualVector, ModelError> {
    match traj.formulation() {
        Formulation::Independent => assemble_indep(prob, p, traj),
        Formulation::Dependent => assemble_dep(prob, p, traj),
    }
}

/// `(mu, nu)` from the initial stationarity conditions: `nu = lambda_0`,
/// `mu = D_{q_0} L_0`.
pub fn recover_multipliers(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
) -> Result<(Vector, Vector), ModelError> {
    let t = interval_terms(prob.system.as_ref(), &traj.pair(0), traj.mode(0), p)?;
    Ok((-t.q_momentum_minus(), traj.lam[0].clone()))
}

/// Boundary velocities `(v_0^-, v_N^+)` of a trajectory in either formulation.
pub fn boundary_velocities(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
) -> Result<(Vector, Vector), ModelError> {
    let sys = prob.system.as_ref();
    let nn = p.n_steps;
    let first = interval_terms(sys, &traj.pair(0), traj.mode(0), p)?;
    let last = interval_terms(sys, &traj.pair(nn - 1), traj.mode(nn - 1), p)?;
    Ok((first.velocity_minus(), last.velocity_plus()))
}

/// Discrete cost `phi(q_N, v_N^+) + h/2 sum_k (alpha U1^T g U1 + (1 - alpha) U2^T g U2)`,
/// with the stage minimisers standing in for `U` in the independent case.
pub fn objective(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
) -> Result<f64, ModelError> {
    let sys = prob.system.as_ref();
    let terms = all_terms(prob, p, traj)?;
    let mut running = 0.0;
    for t in &terms {
        for s in &t.stages {
            running += s.weight * s.control.dot(&(sys.metric(&s.q_bar) * &s.control));
        }
    }
    let nn = p.n_steps;
    let v_n = terms[nn - 1].velocity_plus();
    Ok(prob.terminal.value(&traj.q[nn], &v_n) + 0.5 * p.h * running)
}

/// Interior-node momentum matching defect `max_k |p_k^+ - p_k^-|_inf`.
pub fn momentum_defect(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
) -> Result<f64, ModelError> {
    let terms = all_terms(prob, p, traj)?;
    let mut worst: f64 = 0.0;
    for k in 1..p.n_steps {
        let d = terms[k].momentum_minus().stacked() - terms[k - 1].momentum_plus().stacked();
        worst = worst.max(max_norm(&d));
    }
    Ok(worst)
}
