//! Continuous problem data.
//!
//! A controlled second-order system `q'' = f(q, q') + rho(q) u` with running
//! cost `1/2 u^T g(q) u`, a terminal cost `phi(q(T), q'(T))` and initial data.
//! Rank-3 derivatives of `rho` and `g` are only ever exposed through their
//! contracted actions.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::fd;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("control metric is not positive definite at q = {q:?}")]
    MetricSingular { q: Vec<f64> },
    #[error("model is singular at q = {q:?}: {reason}")]
    Singular { q: Vec<f64>, reason: &'static str },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid problem data: {0}")]
    Invalid(String),
}

/// Structure of the control metric `g(q)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MetricKind {
    /// General SPD matrix, factorised on every use.
    General,
    /// `g(q) = c I` with `c > 0` independent of `q`.
    ConstantScalar(f64),
}

/// Affine-controlled second-order system.
///
/// Only `drift`, `anchor` and `metric` are mandatory. The derivative methods
/// default to central finite differences, which is convenient for
/// prototyping; models used in production should override them.
///
/// Implementations must be pure: identical inputs give identical outputs.
pub trait ControlSystem: Send + Sync {
    /// Configuration dimension `n`.
    fn state_dim(&self) -> usize;

    /// Control dimension `m <= n`.
    fn control_dim(&self) -> usize;

    /// Drift force `f(q, v)`.
    fn drift(&self, q: &Vector, v: &Vector) -> Vector;

    /// `D_q f(q, v)`, an `n x n` matrix.
    fn drift_dq(&self, q: &Vector, v: &Vector) -> Matrix {
        fd::central_jacobian(|x| self.drift(x, v), q)
    }

    /// `D_v f(q, v)`, an `n x n` matrix.
    fn drift_dv(&self, q: &Vector, v: &Vector) -> Matrix {
        fd::central_jacobian(|x| self.drift(q, x), v)
    }

    /// Control anchor `rho(q)`, an `n x m` matrix of full column rank.
    fn anchor(&self, q: &Vector) -> Matrix;

    /// `(D_q rho(q)[w]) u`.
    fn anchor_dq_action(&self, q: &Vector, u: &Vector, w: &Vector) -> Vector {
        let mut out = Vector::zeros(self.state_dim());
        let mut qp = q.clone();
        for j in 0..q.len() {
            if w[j] == 0.0 {
                continue;
            }
            let step = fd::central_step(q[j]);
            qp[j] = q[j] + step;
            let plus = self.anchor(&qp) * u;
            qp[j] = q[j] - step;
            let minus = self.anchor(&qp) * u;
            qp[j] = q[j];
            out += (plus - minus) * (w[j] / (2.0 * step));
        }
        out
    }

    /// Control metric `g(q)`, an SPD `m x m` matrix.
    fn metric(&self, q: &Vector) -> Matrix;

    /// `D_q [u^T g(q) u] . w`.
    fn metric_dq_action(&self, q: &Vector, u: &Vector, w: &Vector) -> f64 {
        if let MetricKind::ConstantScalar(_) = self.metric_kind() {
            return 0.0;
        }
        let mut out = 0.0;
        let mut qp = q.clone();
        for j in 0..q.len() {
            if w[j] == 0.0 {
                continue;
            }
            let step = fd::central_step(q[j]);
            qp[j] = q[j] + step;
            let plus = u.dot(&(self.metric(&qp) * u));
            qp[j] = q[j] - step;
            let minus = u.dot(&(self.metric(&qp) * u));
            qp[j] = q[j];
            out += (plus - minus) * w[j] / (2.0 * step);
        }
        out
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::General
    }

    /// Rejects configurations where the model is not defined.
    fn check_point(&self, _q: &Vector) -> Result<(), ModelError> {
        Ok(())
    }
}

/// Solves `g(q) x = rhs`.
pub fn solve_metric(
    sys: &dyn ControlSystem,
    q: &Vector,
    rhs: &Vector,
) -> Result<Vector, ModelError> {
    match sys.metric_kind() {
        MetricKind::ConstantScalar(c) => {
            if c > 0.0 && c.is_finite() {
                Ok(rhs / c)
            } else {
                Err(ModelError::MetricSingular {
                    q: q.as_slice().to_vec(),
                })
            }
        }
        MetricKind::General => {
            let chol = sys
                .metric(q)
                .cholesky()
                .ok_or_else(|| ModelError::MetricSingular {
                    q: q.as_slice().to_vec(),
                })?;
            Ok(chol.solve(rhs))
        }
    }
}

/// Reduced control operator `b(q) = rho(q) g(q)^{-1} rho(q)^T`.
pub fn eval_b(sys: &dyn ControlSystem, q: &Vector) -> Result<Matrix, ModelError> {
    let rho = sys.anchor(q);
    let ginv_rhot = match sys.metric_kind() {
        MetricKind::ConstantScalar(c) if c > 0.0 && c.is_finite() => rho.transpose() / c,
        MetricKind::ConstantScalar(_) => {
            return Err(ModelError::MetricSingular {
                q: q.as_slice().to_vec(),
            })
        }
        MetricKind::General => {
            let chol = sys
                .metric(q)
                .cholesky()
                .ok_or_else(|| ModelError::MetricSingular {
                    q: q.as_slice().to_vec(),
                })?;
            chol.solve(&rho.transpose())
        }
    };
    let b = &rho * ginv_rhot;
    // symmetrise away the rounding asymmetry of the solve
    Ok((&b + b.transpose()) * 0.5)
}

/// Control minimising the pre-Hamiltonian: `g(q) u = rho(q)^T lambda`.
pub fn minimising_control(
    sys: &dyn ControlSystem,
    q: &Vector,
    lam: &Vector,
) -> Result<Vector, ModelError> {
    let rhs = sys.anchor(q).tr_mul(lam);
    solve_metric(sys, q, &rhs)
}

/// Gradient in `q` of `lambda^T b(q) lambda`.
///
/// With `u = g^{-1} rho^T lambda` the `j`-th component is
/// `2 lambda^T (D rho[e_j]) u - D[u^T g u][e_j]`.
pub fn eval_grad_b(
    sys: &dyn ControlSystem,
    q: &Vector,
    lam: &Vector,
) -> Result<Vector, ModelError> {
    let n = sys.state_dim();
    let u = minimising_control(sys, q, lam)?;
    let constant_metric = matches!(sys.metric_kind(), MetricKind::ConstantScalar(_));
    let mut grad = Vector::zeros(n);
    let mut e = Vector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        let mut gj = 2.0 * lam.dot(&sys.anchor_dq_action(q, &u, &e));
        if !constant_metric {
            gj -= sys.metric_dq_action(q, &u, &e);
        }
        grad[j] = gj;
        e[j] = 0.0;
    }
    Ok(grad)
}

/// Terminal cost `phi(q_N, v_N)` with its partial gradients.
pub trait TerminalCost: Send + Sync {
    fn value(&self, q: &Vector, v: &Vector) -> f64;
    fn grad_q(&self, q: &Vector, v: &Vector) -> Vector;
    fn grad_v(&self, q: &Vector, v: &Vector) -> Vector;

    /// Terminal state the cost steers towards, if there is one.
    fn target(&self) -> Option<(Vector, Vector)> {
        None
    }
}

/// `phi = 0`.
#[derive(Clone, Debug)]
pub struct ZeroTerminalCost {
    pub dim: usize,
}

impl TerminalCost for ZeroTerminalCost {
    fn value(&self, _q: &Vector, _v: &Vector) -> f64 {
        0.0
    }
    fn grad_q(&self, _q: &Vector, _v: &Vector) -> Vector {
        Vector::zeros(self.dim)
    }
    fn grad_v(&self, _q: &Vector, _v: &Vector) -> Vector {
        Vector::zeros(self.dim)
    }
}

/// `phi = (q - qT)^T Kq (q - qT) + (v - vT)^T Kv (v - vT)`.
#[derive(Clone, Debug)]
pub struct QuadraticTerminalCost {
    pub q_target: Vector,
    pub v_target: Vector,
    pub kq: Matrix,
    pub kv: Matrix,
}

impl QuadraticTerminalCost {
    pub fn new(
        q_target: Vector,
        v_target: Vector,
        kq: Matrix,
        kv: Matrix,
    ) -> Result<Self, ModelError> {
        let n = q_target.len();
        if v_target.len() != n {
            return Err(ModelError::Dimension {
                what: "terminal velocity target",
                expected: n,
                got: v_target.len(),
            });
        }
        for (name, k) in [("Kq", &kq), ("Kv", &kv)] {
            if k.nrows() != n || k.ncols() != n {
                return Err(ModelError::Dimension {
                    what: "terminal weight",
                    expected: n,
                    got: k.nrows(),
                });
            }
            if (k - k.transpose()).amax() > 1e-12 * k.amax().max(1.0) || k.clone().cholesky().is_none()
            {
                return Err(ModelError::Invalid(format!(
                    "terminal weight {name} must be symmetric positive definite"
                )));
            }
        }
        Ok(QuadraticTerminalCost {
            q_target,
            v_target,
            kq,
            kv,
        })
    }
}

impl TerminalCost for QuadraticTerminalCost {
    fn value(&self, q: &Vector, v: &Vector) -> f64 {
        let dq = q - &self.q_target;
        let dv = v - &self.v_target;
        dq.dot(&(&self.kq * &dq)) + dv.dot(&(&self.kv * &dv))
    }
    fn grad_q(&self, q: &Vector, _v: &Vector) -> Vector {
        (&self.kq + self.kq.transpose()) * (q - &self.q_target)
    }
    fn grad_v(&self, _q: &Vector, v: &Vector) -> Vector {
        (&self.kv + self.kv.transpose()) * (v - &self.v_target)
    }
    fn target(&self) -> Option<(Vector, Vector)> {
        Some((self.q_target.clone(), self.v_target.clone()))
    }
}

/// Linear system `f = A q + B v` with constant anchor and metric.
///
/// With `A = B = 0` and identity anchor/metric this is the fully actuated
/// free particle.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub rho: Matrix,
    pub g: Matrix,
}

impl LinearSystem {
    pub fn free_particle(n: usize) -> Self {
        LinearSystem {
            a: Matrix::zeros(n, n),
            b: Matrix::zeros(n, n),
            rho: Matrix::identity(n, n),
            g: Matrix::identity(n, n),
        }
    }
}

impl ControlSystem for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.rho.ncols()
    }
    fn drift(&self, q: &Vector, v: &Vector) -> Vector {
        &self.a * q + &self.b * v
    }
    fn drift_dq(&self, _q: &Vector, _v: &Vector) -> Matrix {
        self.a.clone()
    }
    fn drift_dv(&self, _q: &Vector, _v: &Vector) -> Matrix {
        self.b.clone()
    }
    fn anchor(&self, _q: &Vector) -> Matrix {
        self.rho.clone()
    }
    fn anchor_dq_action(&self, _q: &Vector, _u: &Vector, _w: &Vector) -> Vector {
        Vector::zeros(self.state_dim())
    }
    fn metric(&self, _q: &Vector) -> Matrix {
        self.g.clone()
    }
    fn metric_dq_action(&self, _q: &Vector, _u: &Vector, _w: &Vector) -> f64 {
        0.0
    }
}

/// Optimal control problem: system, terminal cost, initial state and horizon.
#[derive(Clone)]
pub struct OcProblem {
    pub system: Arc<dyn ControlSystem>,
    pub terminal: Arc<dyn TerminalCost>,
    pub q0: Vector,
    pub v0: Vector,
    pub horizon: f64,
}

impl fmt::Debug for OcProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcProblem")
            .field("n", &self.system.state_dim())
            .field("m", &self.system.control_dim())
            .field("q0", &self.q0.as_slice())
            .field("v0", &self.v0.as_slice())
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl OcProblem {
    pub fn new(
        system: Arc<dyn ControlSystem>,
        terminal: Arc<dyn TerminalCost>,
        q0: Vector,
        v0: Vector,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        let n = system.state_dim();
        let m = system.control_dim();
        if n == 0 || m == 0 || m > n {
            return Err(ModelError::Invalid(format!(
                "need 0 < m <= n, got n = {n}, m = {m}"
            )));
        }
        for (what, v) in [("initial position", &q0), ("initial velocity", &v0)] {
            if v.len() != n {
                return Err(ModelError::Dimension {
                    what,
                    expected: n,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::Invalid(format!("{what} is not finite")));
            }
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(OcProblem {
            system,
            terminal,
            q0,
            v0,
            horizon,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.system.control_dim()
    }
}

/// Per-probe maximum mixed errors of each analytic derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeErrors {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub drift_dq: f64,
    pub drift_dv: f64,
    pub anchor_dq: f64,
    pub metric_dq: f64,
    pub grad_b: f64,
}

impl ProbeErrors {
    pub fn max(&self) -> f64 {
        [
            self.drift_dq,
            self.drift_dv,
            self.anchor_dq,
            self.metric_dq,
            self.grad_b,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct DerivativeReport {
    pub tolerance: f64,
    pub probes: Vec<ProbeErrors>,
}

impl DerivativeReport {
    pub fn max_error(&self) -> f64 {
        self.probes.iter().map(ProbeErrors::max).fold(0.0, f64::max)
    }

    /// True iff every error is within tolerance (NaN fails).
    pub fn passed(&self) -> bool {
        self.probes
            .iter()
            .all(|p| p.max() <= self.tolerance && !p.max().is_nan())
    }
}

/// Default tolerance for [`check_derivatives`].
pub const DERIVATIVE_TOLERANCE: f64 = 1e-6;

/// Compares every analytic derivative of `sys` with a fourth-order central
/// difference at each probe `(q, v)`. `v` doubles as the costate used in the
/// `grad b` check.
pub fn check_derivatives(sys: &dyn ControlSystem, probes: &[(Vector, Vector)]) -> DerivativeReport {
    let n = sys.state_dim();
    let m = sys.control_dim();
    let report = probes
        .iter()
        .map(|(q, v)| {
            let drift_dq = fd::mixed_error(
                sys.drift_dq(q, v).as_slice(),
                fd::five_point_jacobian(|x| sys.drift(x, v), q).as_slice(),
            );
            let drift_dv = fd::mixed_error(
                sys.drift_dv(q, v).as_slice(),
                fd::five_point_jacobian(|x| sys.drift(q, x), v).as_slice(),
            );

            let mut controls: Vec<Vector> = (0..m)
                .map(|i| {
                    let mut e = Vector::zeros(m);
                    e[i] = 1.0;
                    e
                })
                .collect();
            controls.push(Vector::from_iterator(m, (0..m).map(|i| 1.0 - 0.37 * i as f64)));

            let mut anchor_dq: f64 = 0.0;
            let mut metric_dq: f64 = 0.0;
            for u in &controls {
                let analytic = Matrix::from_columns(
                    &(0..n)
                        .map(|j| {
                            let mut w = Vector::zeros(n);
                            w[j] = 1.0;
                            sys.anchor_dq_action(q, u, &w)
                        })
                        .collect::<Vec<_>>(),
                );
                let numeric = fd::five_point_jacobian(|x| sys.anchor(x) * u, q);
                anchor_dq = anchor_dq.max(fd::mixed_error(analytic.as_slice(), numeric.as_slice()));

                let analytic = Vector::from_iterator(
                    n,
                    (0..n).map(|j| {
                        let mut w = Vector::zeros(n);
                        w[j] = 1.0;
                        sys.metric_dq_action(q, u, &w)
                    }),
                );
                let numeric = fd::five_point_gradient(|x| u.dot(&(sys.metric(x) * u)), q);
                metric_dq = metric_dq.max(fd::mixed_error(analytic.as_slice(), numeric.as_slice()));
            }

            let grad_b = match eval_grad_b(sys, q, v) {
                Ok(analytic) => {
                    let numeric = fd::five_point_gradient(
                        |x| match eval_b(sys, x) {
                            Ok(b) => v.dot(&(b * v)),
                            Err(_) => f64::NAN,
                        },
                        q,
                    );
                    fd::mixed_error(analytic.as_slice(), numeric.as_slice())
                }
                Err(_) => f64::NAN,
            };

            ProbeErrors {
                q: q.as_slice().to_vec(),
                v: v.as_slice().to_vec(),
                drift_dq,
                drift_dv,
                anchor_dq,
                metric_dq,
                grad_b,
            }
        })
        .collect();
    DerivativeReport {
        tolerance: DERIVATIVE_TOLERANCE,
        probes: report,
    }
}

/// Gradient check of a terminal cost; returns the largest mixed error.
pub fn check_terminal_gradients(cost: &dyn TerminalCost, probes: &[(Vector, Vector)]) -> f64 {
    probes
        .iter()
        .map(|(q, v)| {
            let gq = fd::five_point_gradient(|x| cost.value(x, v), q);
            let gv = fd::five_point_gradient(|x| cost.value(q, x), v);
            fd::mixed_error(cost.grad_q(q, v).as_slice(), gq.as_slice())
                .max(fd::mixed_error(cost.grad_v(q, v).as_slice(), gv.as_slice()))
        })
        .fold(0.0, f64::max)
}
