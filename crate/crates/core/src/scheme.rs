//! The `(alpha, beta, gamma)` family of low-order discrete Lagrangians.
//!
//! Each interval is sampled at two averaged points: stage 1 with weight
//! `alpha` at `gamma`, stage 2 with weight `1 - alpha` at `1 - gamma`.

use nalgebra::DVector;

use crate::model::{eval_b, eval_grad_b, minimising_control, ControlSystem, ModelError, Vector};

/// One member of the scheme family on a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n_steps: usize,
    pub h: f64,
}

impl SchemeParams {
    /// Grid with `n_steps` intervals on `[0, horizon]`.
    pub fn new(
        alpha: f64,
        beta: f64,
        gamma: f64,
        n_steps: usize,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::Invalid(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if n_steps < 2 {
            return Err(ModelError::Invalid(format!("need at least 2 steps, got {n_steps}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ModelError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(SchemeParams {
            alpha,
            beta,
            gamma,
            n_steps,
            h: horizon / n_steps as f64,
        })
    }

    /// Grid from a step size; `horizon / h` must be an integer to 1e-9.
    pub fn with_step(
        alpha: f64,
        beta: f64,
        gamma: f64,
        h: f64,
        horizon: f64,
    ) -> Result<Self, ModelError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(ModelError::Invalid(format!("step must be positive, got {h}")));
        }
        let ratio = horizon / h;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ModelError::Invalid(format!(
                "horizon {horizon} is not a whole number of steps of {h}"
            )));
        }
        Self::new(alpha, beta, gamma, n as usize, horizon)
    }

    /// Same scheme, same horizon, different number of steps.
    pub fn refined(&self, n_steps: usize) -> Result<Self, ModelError> {
        Self::new(self.alpha, self.beta, self.gamma, n_steps, self.horizon())
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.n_steps as f64
    }

    pub fn node_time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    /// Time stamps of `(U1, U2)` on interval `k`.
    pub fn control_times(&self, k: usize) -> (f64, f64) {
        let t = self.node_time(k);
        (t + (1.0 - self.beta) * self.h, t + self.beta * self.h)
    }

    /// `(weight, theta)` of both stages.
    pub fn stages(&self) -> [(f64, f64); 2] {
        [
            (self.alpha, self.gamma),
            (1.0 - self.alpha, 1.0 - self.gamma),
        ]
    }

    /// Scheme with `alpha <-> 1 - alpha`, `beta <-> 1 - beta`, `gamma <-> 1 - gamma`.
    pub fn mirrored(&self) -> Self {
        SchemeParams {
            alpha: 1.0 - self.alpha,
            beta: 1.0 - self.beta,
            gamma: 1.0 - self.gamma,
            ..*self
        }
    }
}

/// `theta a + (1 - theta) b`.
pub fn average(a: &Vector, b: &Vector, theta: f64) -> Vector {
    a * theta + b * (1.0 - theta)
}

/// `(b - a) / h`.
pub fn difference(a: &Vector, b: &Vector, h: f64) -> Vector {
    (b - a) / h
}

/// Endpoint data of one interval.
#[derive(Clone, Copy, Debug)]
pub struct NodePair<'a> {
    pub q_k: &'a Vector,
    pub lam_k: &'a Vector,
    pub q_k1: &'a Vector,
    pub lam_k1: &'a Vector,
}

#[derive(Clone, Copy, Debug)]
pub struct IntervalControls<'a> {
    pub u1: &'a Vector,
    pub u2: &'a Vector,
}

impl<'a> IntervalControls<'a> {
    fn stage(&self, s: usize) -> &'a Vector {
        if s == 0 {
            self.u1
        } else {
            self.u2
        }
    }
}

/// Whether controls are eliminated or carried as unknowns.
#[derive(Clone, Copy, Debug)]
pub enum ControlMode<'a> {
    Independent,
    Dependent(IntervalControls<'a>),
}

/// Momenta conjugate to `q` and `lambda` at one node.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum {
    pub q: Vector,
    pub lam: Vector,
}

impl Momentum {
    pub fn stacked(&self) -> Vector {
        let n = self.q.len();
        DVector::from_iterator(2 * n, self.q.iter().chain(self.lam.iter()).copied())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Stage {
    pub weight: f64,
    pub theta: f64,
    pub q_bar: Vector,
    /// Control at this stage: the minimiser when independent, the given value otherwise.
    pub control: Vector,
    /// `f + rho u`.
    pub force: Vector,
    /// `D1 f^T lam_bar + d_q P`.
    pub q_grad: Vector,
    /// `D2 f^T lam_bar`.
    pub v_grad: Vector,
    /// `rho^T lam_bar - g U`, dependent case only.
    pub min_residual: Option<Vector>,
}

#[derive(Clone, Debug)]
pub(crate) struct IntervalTerms {
    pub h: f64,
    pub dq: Vector,
    pub dlam: Vector,
    pub stages: [Stage; 2],
}

fn stage_terms(
    sys: &dyn ControlSystem,
    pair: &NodePair<'_>,
    dq: &Vector,
    weight: f64,
    theta: f64,
    control: Option<&Vector>,
) -> Result<Stage, ModelError> {
    let n = sys.state_dim();
    let q_bar = average(pair.q_k, pair.q_k1, theta);
    let lam_bar = average(pair.lam_k, pair.lam_k1, theta);
    let drift = sys.drift(&q_bar, dq);
    let rho = sys.anchor(&q_bar);
    let mut q_grad = sys.drift_dq(&q_bar, dq).tr_mul(&lam_bar);
    let v_grad = sys.drift_dv(&q_bar, dq).tr_mul(&lam_bar);

    let (control, min_residual) = match control {
        None => {
            let u = minimising_control(sys, &q_bar, &lam_bar)?;
            q_grad += eval_grad_b(sys, &q_bar, &lam_bar)? * 0.5;
            (u, None)
        }
        Some(u) => {
            let rho_t_lam = rho.tr_mul(&lam_bar);
            let gu = sys.metric(&q_bar) * u;
            let mut e = Vector::zeros(n);
            for j in 0..n {
                e[j] = 1.0;
                q_grad[j] += lam_bar.dot(&sys.anchor_dq_action(&q_bar, u, &e))
                    - 0.5 * sys.metric_dq_action(&q_bar, u, &e);
                e[j] = 0.0;
            }
            (u.clone(), Some(rho_t_lam - gu))
        }
    };
    let force = &drift + &rho * &control;
    Ok(Stage {
        weight,
        theta,
        q_bar,
        control,
        force,
        q_grad,
        v_grad,
        min_residual,
    })
}

pub(crate) fn interval_terms(
    sys: &dyn ControlSystem,
    pair: &NodePair<'_>,
    mode: ControlMode<'_>,
    p: &SchemeParams,
) -> Result<IntervalTerms, ModelError> {
    let dq = difference(pair.q_k, pair.q_k1, p.h);
    let dlam = difference(pair.lam_k, pair.lam_k1, p.h);
    let [(w1, t1), (w2, t2)] = p.stages();
    let (c1, c2) = match mode {
        ControlMode::Independent => (None, None),
        ControlMode::Dependent(c) => (Some(c.stage(0)), Some(c.stage(1))),
    };
    let s1 = stage_terms(sys, pair, &dq, w1, t1, c1)?;
    let s2 = stage_terms(sys, pair, &dq, w2, t2, c2)?;
    Ok(IntervalTerms {
        h: p.h,
        dq,
        dlam,
        stages: [s1, s2],
    })
}

impl IntervalTerms {
    /// `v_k^- = -D_{lam_k} L`.
    pub fn velocity_minus(&self) -> Vector {
        let mut v = self.dq.clone();
        for s in &self.stages {
            v -= &s.force * (self.h * s.weight * s.theta);
        }
        v
    }

    /// `v_{k+1}^+ = D_{lam_{k+1}} L`.
    pub fn velocity_plus(&self) -> Vector {
        let mut v = self.dq.clone();
        for s in &self.stages {
            v += &s.force * (self.h * s.weight * (1.0 - s.theta));
        }
        v
    }

    /// `-D_{q_k} L`.
    pub fn q_momentum_minus(&self) -> Vector {
        let mut p = self.dlam.clone();
        for s in &self.stages {
            p -= (&s.q_grad * (self.h * s.theta) - &s.v_grad) * s.weight;
        }
        p
    }

    /// `D_{q_{k+1}} L`.
    pub fn q_momentum_plus(&self) -> Vector {
        let mut p = self.dlam.clone();
        for s in &self.stages {
            p += (&s.q_grad * (self.h * (1.0 - s.theta)) + &s.v_grad) * s.weight;
        }
        p
    }

    pub fn momentum_minus(&self) -> Momentum {
        Momentum {
            q: self.q_momentum_minus(),
            lam: self.velocity_minus(),
        }
    }

    pub fn momentum_plus(&self) -> Momentum {
        Momentum {
            q: self.q_momentum_plus(),
            lam: self.velocity_plus(),
        }
    }
}

/// Control-independent discrete Lagrangian.
pub fn lagrangian_indep(
    sys: &dyn ControlSystem,
    pair: &NodePair<'_>,
    p: &SchemeParams,
) -> Result<f64, ModelError> {
    let dq = difference(pair.q_k, pair.q_k1, p.h);
    let dlam = difference(pair.lam_k, pair.lam_k1, p.h);
    let kinetic = dlam.dot(&dq);
    let mut total = 0.0;
    for (w, theta) in p.stages() {
        let q_bar = average(pair.q_k, pair.q_k1, theta);
        let lam_bar = average(pair.lam_k, pair.lam_k1, theta);
        let b = eval_b(sys, &q_bar)?;
        total += w
            * (kinetic + lam_bar.dot(&sys.drift(&q_bar, &dq)) + 0.5 * lam_bar.dot(&(b * &lam_bar)));
    }
    Ok(p.h * total)
}

/// Control-dependent discrete Lagrangian; `beta` does not enter.
pub fn lagrangian_dep(
    sys: &dyn ControlSystem,
    pair: &NodePair<'_>,
    u: &IntervalControls<'_>,
    p: &SchemeParams,
) -> Result<f64, ModelError> {
    let dq = difference(pair.q_k, pair.q_k1, p.h);
    let dlam = difference(pair.lam_k, pair.lam_k1, p.h);
    let kinetic = dlam.dot(&dq);
    let mut total = 0.0;
    for (s, (w, theta)) in p.stages().into_iter().enumerate() {
        let q_bar = average(pair.q_k, pair.q_k1, theta);
        let lam_bar = average(pair.lam_k, pair.lam_k1, theta);
        let us = u.stage(s);
        let potential = lam_bar.dot(&(sys.anchor(&q_bar) * us)) - 0.5 * us.dot(&(sys.metric(&q_bar) * us));
        total += w * (kinetic + lam_bar.dot(&sys.drift(&q_bar, &dq)) + potential);
    }
    Ok(p.h * total)
}

/// `(v_0^-, v_N^+)` from the first and last interval, controls eliminated.
pub fn boundary_velocities_indep(
    sys: &dyn ControlSystem,
    first: &NodePair<'_>,
    last: &NodePair<'_>,
    p: &SchemeParams,
) -> Result<(Vector, Vector), ModelError> {
    let v0 = interval_terms(sys, first, ControlMode::Independent, p)?.velocity_minus();
    let vn = interval_terms(sys, last, ControlMode::Independent, p)?.velocity_plus();
    Ok((v0, vn))
}

fn stage_forces(
    sys: &dyn ControlSystem,
    q_k: &Vector,
    q_k1: &Vector,
    u: &IntervalControls<'_>,
    p: &SchemeParams,
) -> (Vector, [(f64, f64, Vector); 2]) {
    let dq = difference(q_k, q_k1, p.h);
    let forces = p.stages().map(|(w, theta)| (w, theta, Vector::zeros(0)));
    let mut out = forces;
    for (s, slot) in out.iter_mut().enumerate() {
        let q_bar = average(q_k, q_k1, slot.1);
        slot.2 = sys.drift(&q_bar, &dq) + sys.anchor(&q_bar) * u.stage(s);
    }
    (dq, out)
}

/// `v_k^-` of a single interval with given controls; no costate is read.
pub fn velocity_minus_dep(
    sys: &dyn ControlSystem,
    q_k: &Vector,
    q_k1: &Vector,
    u: &IntervalControls<'_>,
    p: &SchemeParams,
) -> Vector {
    let (mut v, forces) = stage_forces(sys, q_k, q_k1, u, p);
    for (w, theta, f) in &forces {
        v -= f * (p.h * w * theta);
    }
    v
}

/// `v_{k+1}^+` of a single interval with given controls.
pub fn velocity_plus_dep(
    sys: &dyn ControlSystem,
    q_k: &Vector,
    q_k1: &Vector,
    u: &IntervalControls<'_>,
    p: &SchemeParams,
) -> Vector {
    let (mut v, forces) = stage_forces(sys, q_k, q_k1, u, p);
    for (w, theta, f) in &forces {
        v += f * (p.h * w * (1.0 - theta));
    }
    v
}

/// `(v_0^-, v_N^+)` with explicit controls.
///
/// `ends` is `(q_0, q_1, q_{N-1}, q_N)`.
pub fn boundary_velocities_dep(
    sys: &dyn ControlSystem,
    ends: (&Vector, &Vector, &Vector, &Vector),
    first: &IntervalControls<'_>,
    last: &IntervalControls<'_>,
    p: &SchemeParams,
) -> (Vector, Vector) {
    let (q0, q1, qn1, qn) = ends;
    (
        velocity_minus_dep(sys, q0, q1, first, p),
        velocity_plus_dep(sys, qn1, qn, last, p),
    )
}

/// `(p_k^-, p_{k+1}^+) = (-D_1 L, D_2 L)` for the interval, controls held fixed.
pub fn discrete_momenta(
    sys: &dyn ControlSystem,
    pair: &NodePair<'_>,
    mode: ControlMode<'_>,
    p: &SchemeParams,
) -> Result<(Momentum, Momentum), ModelError> {
    let t = interval_terms(sys, pair, mode, p)?;
    Ok((t.momentum_minus(), t.momentum_plus()))
}

/// Nodal control from `g(q_k) u_k = rho(q_k)^T lambda_k`.
pub fn nodal_control(
    sys: &dyn ControlSystem,
    q: &Vector,
    lam: &Vector,
) -> Result<Vector, ModelError> {
    minimising_control(sys, q, lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;
    use crate::model::{LinearSystem, Matrix};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    /// Nonlinear test system with velocity-dependent drift and
    /// state-dependent anchor and metric.
    struct Rich;

    impl ControlSystem for Rich {
        fn state_dim(&self) -> usize {
            2
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn drift(&self, q: &Vector, w: &Vector) -> Vector {
            v(&[-q[0] + 0.2 * q[1] * q[1] - 0.1 * w[0], -0.5 * q[1].sin() + 0.3 * w[0] * w[1]])
        }
        fn drift_dq(&self, q: &Vector, _v: &Vector) -> Matrix {
            Matrix::from_row_slice(2, 2, &[-1.0, 0.4 * q[1], 0.0, -0.5 * q[1].cos()])
        }
        fn drift_dv(&self, _q: &Vector, v: &Vector) -> Matrix {
            Matrix::from_row_slice(2, 2, &[-0.1, 0.0, 0.3 * v[1], 0.3 * v[0]])
        }
        fn anchor(&self, q: &Vector) -> Matrix {
            Matrix::from_column_slice(2, 1, &[1.0 + 0.1 * q[1], q[0].cos()])
        }
        fn anchor_dq_action(&self, q: &Vector, u: &Vector, w: &Vector) -> Vector {
            v(&[0.1 * w[1] * u[0], -q[0].sin() * w[0] * u[0]])
        }
        fn metric(&self, q: &Vector) -> Matrix {
            Matrix::from_element(1, 1, 2.0 + q[0] * q[0])
        }
        fn metric_dq_action(&self, q: &Vector, u: &Vector, w: &Vector) -> f64 {
            2.0 * q[0] * w[0] * u[0] * u[0]
        }
    }

    struct Drifting;
    impl ControlSystem for Drifting {
        fn state_dim(&self) -> usize {
            2
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn drift(&self, _q: &Vector, _v: &Vector) -> Vector {
            Vector::zeros(2)
        }
        fn anchor(&self, _q: &Vector) -> Matrix {
            Matrix::zeros(2, 1)
        }
        fn metric(&self, _q: &Vector) -> Matrix {
            Matrix::identity(1, 1)
        }
    }

    fn params(alpha: f64, gamma: f64, h: f64) -> SchemeParams {
        SchemeParams::new(alpha, gamma, gamma, 10, 10.0 * h).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(SchemeParams::new(1.5, 0.5, 0.5, 10, 1.0).is_err());
        assert!(SchemeParams::new(0.5, 0.5, 0.5, 1, 1.0).is_err());
        let p = SchemeParams::with_step(1.0, 1.0, 1.0, 0.1, 28.0).unwrap();
        assert_eq!(p.n_steps, 280);
        assert_relative_eq!(p.horizon(), 28.0, max_relative = 1e-12);
        assert!(SchemeParams::with_step(1.0, 1.0, 1.0, 0.3, 1.0).is_err());
    }

    #[test]
    fn zero_costate_gives_zero_lagrangian() {
        let z = Vector::zeros(2);
        let (q0, q1) = (v(&[0.3, 0.1]), v(&[0.4, -0.2]));
        let pair = NodePair {
            q_k: &q0,
            lam_k: &z,
            q_k1: &q1,
            lam_k1: &z,
        };
        let p = params(0.3, 0.7, 0.1);
        assert_eq!(lagrangian_indep(&Rich, &pair, &p).unwrap(), 0.0);
        let u = Vector::zeros(1);
        let c = IntervalControls { u1: &u, u2: &u };
        assert_eq!(lagrangian_dep(&Rich, &pair, &c, &p).unwrap(), 0.0);
    }

    #[test]
    fn free_system_keeps_only_coupling() {
        let (q0, q1, l0, l1) = (v(&[0.0, 1.0]), v(&[0.5, 2.0]), v(&[1.0, -1.0]), v(&[2.0, 3.0]));
        let pair = NodePair {
            q_k: &q0,
            lam_k: &l0,
            q_k1: &q1,
            lam_k1: &l1,
        };
        let p = params(0.3, 0.6, 0.25);
        let expected = p.h * difference(&l0, &l1, p.h).dot(&difference(&q0, &q1, p.h));
        assert_relative_eq!(lagrangian_indep(&Drifting, &pair, &p).unwrap(), expected, max_relative = 1e-14);
        let (v0, vn) = boundary_velocities_indep(&Drifting, &pair, &pair, &p).unwrap();
        assert_eq!(v0, difference(&q0, &q1, p.h));
        assert_eq!(vn, difference(&q0, &q1, p.h));
        let (pm, _) = discrete_momenta(&Drifting, &pair, ControlMode::Independent, &p).unwrap();
        assert_eq!(pm.q, difference(&l0, &l1, p.h));
    }

    #[test]
    fn alpha_one_gamma_zero_boundary_velocity_is_difference() {
        let (q0, q1, l0, l1) = (v(&[0.3, 1.0]), v(&[0.5, 1.2]), v(&[1.0, -1.0]), v(&[0.2, 0.3]));
        let pair = NodePair {
            q_k: &q0,
            lam_k: &l0,
            q_k1: &q1,
            lam_k1: &l1,
        };
        let p = SchemeParams::new(1.0, 0.0, 0.0, 10, 1.0).unwrap();
        let (v0, _) = boundary_velocities_indep(&Rich, &pair, &pair, &p).unwrap();
        assert_eq!(v0, difference(&q0, &q1, p.h));
    }

    #[test]
    fn dependent_with_minimising_controls_matches_independent() {
        let (q0, q1, l0, l1) = (v(&[0.3, 1.0]), v(&[0.5, 1.2]), v(&[1.0, -1.0]), v(&[0.2, 0.3]));
        let pair = NodePair {
            q_k: &q0,
            lam_k: &l0,
            q_k1: &q1,
            lam_k1: &l1,
        };
        for (alpha, gamma) in [(1.0, 1.0), (0.5, 0.5), (0.3, 0.8), (1.0, 0.0)] {
            let p = params(alpha, gamma, 0.1);
            let u1 = minimising_control(&Rich, &average(&q0, &q1, gamma), &average(&l0, &l1, gamma)).unwrap();
            let u2 = minimising_control(&Rich, &average(&q0, &q1, 1.0 - gamma), &average(&l0, &l1, 1.0 - gamma))
                .unwrap();
            let c = IntervalControls { u1: &u1, u2: &u2 };
            let li = lagrangian_indep(&Rich, &pair, &p).unwrap();
            let ld = lagrangian_dep(&Rich, &pair, &c, &p).unwrap();
            assert_relative_eq!(li, ld, max_relative = 1e-12, epsilon = 1e-14);

            let (v0i, vni) = boundary_velocities_indep(&Rich, &pair, &pair, &p).unwrap();
            let (v0d, vnd) = boundary_velocities_dep(&Rich, (&q0, &q1, &q0, &q1), &c, &c, &p);
            assert!((v0i - v0d).amax() <= 1e-12);
            assert!((vni - vnd).amax() <= 1e-12);

            let (mi, pi) = discrete_momenta(&Rich, &pair, ControlMode::Independent, &p).unwrap();
            let (md, pd) = discrete_momenta(&Rich, &pair, ControlMode::Dependent(c), &p).unwrap();
            assert!((mi.stacked() - md.stacked()).amax() <= 1e-10);
            assert!((pi.stacked() - pd.stacked()).amax() <= 1e-10);
        }
    }

    fn fd_momenta(
        l: &dyn Fn(&Vector, &Vector, &Vector, &Vector) -> f64,
        q0: &Vector,
        l0: &Vector,
        q1: &Vector,
        l1: &Vector,
    ) -> (Vector, Vector, Vector, Vector) {
        let d_q0 = fd::five_point_gradient(|x| l(x, l0, q1, l1), q0);
        let d_l0 = fd::five_point_gradient(|x| l(q0, x, q1, l1), l0);
        let d_q1 = fd::five_point_gradient(|x| l(q0, l0, x, l1), q1);
        let d_l1 = fd::five_point_gradient(|x| l(q0, l0, q1, x), l1);
        (d_q0, d_l0, d_q1, d_l1)
    }

    fn check_momenta_against_fd(alpha: f64, gamma: f64, dependent: bool) {
        let (q0, q1, l0, l1) = (v(&[0.3, 1.0]), v(&[0.45, 1.1]), v(&[1.0, -1.0]), v(&[0.8, -0.7]));
        let (u1, u2) = (v(&[0.7]), v(&[-0.4]));
        let c = IntervalControls { u1: &u1, u2: &u2 };
        let p = params(alpha, gamma, 0.1);
        let lag = |a: &Vector, b: &Vector, cq: &Vector, d: &Vector| {
            let pair = NodePair {
                q_k: a,
                lam_k: b,
                q_k1: cq,
                lam_k1: d,
            };
            if dependent {
                lagrangian_dep(&Rich, &pair, &c, &p).unwrap()
            } else {
                lagrangian_indep(&Rich, &pair, &p).unwrap()
            }
        };
        let (d_q0, d_l0, d_q1, d_l1) = fd_momenta(&lag, &q0, &l0, &q1, &l1);
        let pair = NodePair {
            q_k: &q0,
            lam_k: &l0,
            q_k1: &q1,
            lam_k1: &l1,
        };
        let mode = if dependent {
            ControlMode::Dependent(c)
        } else {
            ControlMode::Independent
        };
        let (pm, pp) = discrete_momenta(&Rich, &pair, mode, &p).unwrap();
        assert!(fd::mixed_error((-pm.q).as_slice(), d_q0.as_slice()) <= 1e-6);
        assert!(fd::mixed_error((-pm.lam).as_slice(), d_l0.as_slice()) <= 1e-6);
        assert!(fd::mixed_error(pp.q.as_slice(), d_q1.as_slice()) <= 1e-6);
        assert!(fd::mixed_error(pp.lam.as_slice(), d_l1.as_slice()) <= 1e-6);
    }

    #[test]
    fn momenta_match_fd_independent() {
        for (a, g) in [(1.0, 1.0), (0.5, 0.5), (0.2, 0.9), (1.0, 0.0), (0.0, 0.3)] {
            check_momenta_against_fd(a, g, false);
        }
    }

    #[test]
    fn momenta_match_fd_dependent() {
        for (a, g) in [(1.0, 1.0), (0.5, 0.5), (0.2, 0.9), (1.0, 0.0), (0.0, 0.3)] {
            check_momenta_against_fd(a, g, true);
        }
    }

    #[test]
    fn lagrangian_is_consistent_with_continuous_one() {
        // smooth curve y(t) = (q(t), lambda(t)) sampled at [t, t + h]
        let q = |t: f64| v(&[t.cos(), 0.5 * t.sin() + 0.2]);
        let qd = |t: f64| v(&[-t.sin(), 0.5 * t.cos()]);
        let l = |t: f64| v(&[0.3 + 0.1 * t, (2.0 * t).cos()]);
        let ld = |t: f64| v(&[0.1, -2.0 * (2.0 * t).sin()]);
        let t = 0.4;
        let cont = {
            let b = eval_b(&Rich, &q(t)).unwrap();
            ld(t).dot(&qd(t)) + l(t).dot(&Rich.drift(&q(t), &qd(t))) + 0.5 * l(t).dot(&(b * l(t)))
        };
        let err = |h: f64| {
            let p = SchemeParams::new(0.3, 0.3, 0.8, 10, 10.0 * h).unwrap();
            let (a, b, c, d) = (q(t), l(t), q(t + h), l(t + h));
            let pair = NodePair {
                q_k: &a,
                lam_k: &b,
                q_k1: &c,
                lam_k1: &d,
            };
            (lagrangian_indep(&Rich, &pair, &p).unwrap() / h - cont).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn control_times_follow_beta() {
        let p = SchemeParams::new(0.5, 0.25, 0.5, 4, 1.0).unwrap();
        let (t1, t2) = p.control_times(1);
        assert_relative_eq!(t1, 0.25 + 0.75 * 0.25);
        assert_relative_eq!(t2, 0.25 + 0.25 * 0.25);
    }

    #[test]
    fn linear_system_velocities() {
        let sys = LinearSystem::free_particle(1);
        let (q0, q1, l0) = (v(&[0.0]), v(&[1.0]), v(&[2.0]));
        let pair = NodePair {
            q_k: &q0,
            lam_k: &l0,
            q_k1: &q1,
            lam_k1: &l0,
        };
        let p = SchemeParams::new(1.0, 1.0, 1.0, 10, 1.0).unwrap();
        // F = b lambda = 2 at stage 1 (theta = 1)
        let (v0, vn) = boundary_velocities_indep(&sys, &pair, &pair, &p).unwrap();
        assert_relative_eq!(v0[0], 10.0 - 0.1 * 2.0, max_relative = 1e-14);
        assert_relative_eq!(vn[0], 10.0, max_relative = 1e-14);
    }

    fn vec2() -> impl Strategy<Value = Vector> {
        (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| v(&[a, b]))
    }

    proptest! {
        #[test]
        fn mirrored_scheme_has_same_value(
            q0 in vec2(), q1 in vec2(), l0 in vec2(), l1 in vec2(),
            alpha in 0.0..=1.0f64, gamma in 0.0..=1.0f64, beta in 0.0..=1.0f64,
            u1 in -2.0..2.0f64, u2 in -2.0..2.0f64,
        ) {
            let p = SchemeParams::new(alpha, beta, gamma, 10, 1.0).unwrap();
            let pair = NodePair { q_k: &q0, lam_k: &l0, q_k1: &q1, lam_k1: &l1 };
            let a = lagrangian_indep(&Rich, &pair, &p).unwrap();
            let b = lagrangian_indep(&Rich, &pair, &p.mirrored()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            let (u1, u2) = (v(&[u1]), v(&[u2]));
            let c = IntervalControls { u1: &u1, u2: &u2 };
            let cm = IntervalControls { u1: &u2, u2: &u1 };
            let a = lagrangian_dep(&Rich, &pair, &c, &p).unwrap();
            let b = lagrangian_dep(&Rich, &pair, &cm, &p.mirrored()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn control_substitution_identity(
            q0 in vec2(), q1 in vec2(), l0 in vec2(), l1 in vec2(),
            alpha in 0.0..=1.0f64, gamma in 0.0..=1.0f64,
        ) {
            let p = SchemeParams::new(alpha, gamma, gamma, 10, 1.0).unwrap();
            let pair = NodePair { q_k: &q0, lam_k: &l0, q_k1: &q1, lam_k1: &l1 };
            let u1 = minimising_control(&Rich, &average(&q0, &q1, gamma), &average(&l0, &l1, gamma)).unwrap();
            let u2 = minimising_control(&Rich, &average(&q0, &q1, 1.0 - gamma), &average(&l0, &l1, 1.0 - gamma)).unwrap();
            let c = IntervalControls { u1: &u1, u2: &u2 };
            let a = lagrangian_indep(&Rich, &pair, &p).unwrap();
            let b = lagrangian_dep(&Rich, &pair, &c, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn dependent_velocities_ignore_costate(
            q0 in vec2(), q1 in vec2(), u1 in -2.0..2.0f64, u2 in -2.0..2.0f64,
            alpha in 0.0..=1.0f64, gamma in 0.0..=1.0f64, l0 in vec2(), l1 in vec2(),
        ) {
            let p = SchemeParams::new(alpha, gamma, gamma, 10, 1.0).unwrap();
            let (u1, u2) = (v(&[u1]), v(&[u2]));
            let c = IntervalControls { u1: &u1, u2: &u2 };
            let pair_a = NodePair { q_k: &q0, lam_k: &l0, q_k1: &q1, lam_k1: &l1 };
            let z = Vector::zeros(2);
            let pair_b = NodePair { q_k: &q0, lam_k: &z, q_k1: &q1, lam_k1: &z };
            let ta = interval_terms(&Rich, &pair_a, ControlMode::Dependent(c), &p).unwrap();
            let tb = interval_terms(&Rich, &pair_b, ControlMode::Dependent(c), &p).unwrap();
            prop_assert_eq!(ta.velocity_minus(), tb.velocity_minus());
            prop_assert_eq!(ta.velocity_plus(), tb.velocity_plus());
            prop_assert_eq!(ta.velocity_minus(), velocity_minus_dep(&Rich, &q0, &q1, &c, &p));
        }
    }
}
