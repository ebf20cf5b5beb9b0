//! Planar low-thrust transfer in a central gravity field.
//!
//! `q'' = -G M q / |q|^3 + (J q / |q|) u` with tangential thrust `u` and unit
//! control metric.

use std::f64::consts::PI;

use crate::model::{ControlSystem, Matrix, MetricKind, ModelError, QuadraticTerminalCost, Vector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeplerSystem {
    /// Gravitational parameter `G M`.
    pub gm: f64,
}

pub fn kepler_system(g: f64, m: f64) -> Result<KeplerSystem, ModelError> {
    if !(g > 0.0 && m > 0.0 && g.is_finite() && m.is_finite()) {
        return Err(ModelError::Invalid(format!("G and M must be positive, got G = {g}, M = {m}")));
    }
    Ok(KeplerSystem { gm: g * m })
}

fn radius(q: &Vector) -> f64 {
    q[0].hypot(q[1])
}

/// Quarter turn `J w = (-w_y, w_x)`.
fn rot(w: &Vector) -> Vector {
    Vector::from_vec(vec![-w[1], w[0]])
}

impl ControlSystem for KeplerSystem {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, q: &Vector, _v: &Vector) -> Vector {
        let r = radius(q);
        q * (-self.gm / (r * r * r))
    }

    fn drift_dq(&self, q: &Vector, _v: &Vector) -> Matrix {
        let r2 = q.norm_squared();
        let r = r2.sqrt();
        let r3 = r2 * r;
        let r5 = r3 * r2;
        let mut d = q * q.transpose() * (3.0 * self.gm / r5);
        for i in 0..2 {
            d[(i, i)] -= self.gm / r3;
        }
        d
    }

    fn drift_dv(&self, _q: &Vector, _v: &Vector) -> Matrix {
        Matrix::zeros(2, 2)
    }

    fn anchor(&self, q: &Vector) -> Matrix {
        let r = radius(q);
        Matrix::from_column_slice(2, 1, &[-q[1] / r, q[0] / r])
    }

    fn anchor_dq_action(&self, q: &Vector, u: &Vector, w: &Vector) -> Vector {
        let r = radius(q);
        let jw = rot(w);
        let jq = rot(q);
        (jw / r - jq * (q.dot(w) / (r * r * r))) * u[0]
    }

    fn metric(&self, _q: &Vector) -> Matrix {
        Matrix::identity(1, 1)
    }

    fn metric_dq_action(&self, _q: &Vector, _u: &Vector, _w: &Vector) -> f64 {
        0.0
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::ConstantScalar(1.0)
    }

    fn check_point(&self, q: &Vector) -> Result<(), ModelError> {
        let r = radius(q);
        if r > 0.0 && r.is_finite() {
            Ok(())
        } else {
            Err(ModelError::Singular {
                q: q.as_slice().to_vec(),
                reason: "gravity is undefined at the origin",
            })
        }
    }
}

/// `T = d sqrt(4 pi^2 (r0 + rT)^3 / (8 G M))`: `d` times the period of the
/// Hohmann ellipse between the two radii.
pub fn transfer_horizon(d_revs: f64, g: f64, m: f64, r0: f64, rt: f64) -> f64 {
    d_revs * (4.0 * PI * PI * (r0 + rt).powi(3) / (8.0 * g * m)).sqrt()
}

/// Circular orbit state at `(x0, 0)`.
pub fn initial_circular_state(g: f64, m: f64, x0: f64) -> (Vector, Vector) {
    (
        Vector::from_vec(vec![x0, 0.0]),
        Vector::from_vec(vec![0.0, (g * m / x0).sqrt()]),
    )
}

pub fn quadratic_terminal_cost(
    q_target: Vector,
    v_target: Vector,
    kq: Matrix,
    kv: Matrix,
) -> Result<QuadraticTerminalCost, ModelError> {
    QuadraticTerminalCost::new(q_target, v_target, kq, kv)
}

/// Parameters of the transfer experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct KeplerParams {
    pub g: f64,
    pub m: f64,
    pub d_revs: f64,
    pub r0: f64,
    pub rt: f64,
    pub x0: f64,
    pub q_target: Vector,
    pub v_target: Vector,
    pub kq: Matrix,
    pub kv: Matrix,
}

impl Default for KeplerParams {
    /// Transfer from radius 4 to radius 5 with `G = 1`, `M = 10`, unit weights,
    /// ending on the outer circular orbit at `(-5, 0)`.
    fn default() -> Self {
        let (g, m) = (1.0, 10.0);
        KeplerParams {
            g,
            m,
            d_revs: 1.5,
            r0: 4.0,
            rt: 5.0,
            x0: 4.0,
            q_target: Vector::from_vec(vec![-5.0, 0.0]),
            v_target: Vector::from_vec(vec![0.0, -(g * m / 5.0).sqrt()]),
            kq: Matrix::identity(2, 2),
            kv: Matrix::identity(2, 2),
        }
    }
}

impl KeplerParams {
    pub fn horizon(&self) -> f64 {
        transfer_horizon(self.d_revs, self.g, self.m, self.r0, self.rt)
    }

    /// Problem over the given horizon.
    pub fn problem(&self, horizon: f64) -> Result<crate::model::OcProblem, ModelError> {
        use std::sync::Arc;
        if !(self.r0 > 0.0 && self.rt > 0.0) {
            return Err(ModelError::Invalid("radii must be positive".into()));
        }
        if !(self.x0 > 0.0) {
            return Err(ModelError::Invalid(format!("x0 must be positive, got {}", self.x0)));
        }
        let sys = kepler_system(self.g, self.m)?;
        let cost = quadratic_terminal_cost(
            self.q_target.clone(),
            self.v_target.clone(),
            self.kq.clone(),
            self.kv.clone(),
        )?;
        let (q0, v0) = initial_circular_state(self.g, self.m, self.x0);
        crate::model::OcProblem::new(Arc::new(sys), Arc::new(cost), q0, v0, horizon)
    }
}

/// Polar coordinates `(r, angle, radial velocity, tangential velocity)`.
fn polar(q: &Vector, v: &Vector) -> [f64; 4] {
    let th = q[1].atan2(q[0]);
    let (c, s) = (th.cos(), th.sin());
    [radius(q), th, v[0] * c + v[1] * s, -v[0] * s + v[1] * c]
}

fn cartesian([r, th, vr, vt]: [f64; 4]) -> (Vector, Vector) {
    let (c, s) = (th.cos(), th.sin());
    (
        Vector::from_vec(vec![r * c, r * s]),
        Vector::from_vec(vec![vr * c - vt * s, vr * s + vt * c]),
    )
}

impl KeplerParams {
    /// Family of problems whose target moves, linearly in polar coordinates,
    /// from the uncontrolled end state (`s = 0`) to the configured target
    /// (`s = 1`). The target angle is taken on the turn closest to the
    /// uncontrolled one.
    pub fn target_path(
        &self,
        horizon: f64,
    ) -> Result<impl Fn(f64) -> Result<crate::model::OcProblem, ModelError> + '_, ModelError> {
        let base = self.problem(horizon)?;
        let gm = self.g * self.m;
        let omega = (gm / self.x0.powi(3)).sqrt();
        let start = [self.x0, omega * horizon, 0.0, self.x0 * omega];
        if radius(&self.q_target) == 0.0 {
            return Err(ModelError::Invalid("target at the origin".into()));
        }
        let mut end = polar(&self.q_target, &self.v_target);
        end[1] += ((start[1] - end[1]) / (2.0 * PI)).round() * 2.0 * PI;
        Ok(move |s: f64| {
            let mut z = [0.0; 4];
            for i in 0..4 {
                z[i] = start[i] + s * (end[i] - start[i]);
            }
            let (qt, vt) = cartesian(z);
            let cost = quadratic_terminal_cost(qt, vt, self.kq.clone(), self.kv.clone())?;
            Ok(crate::model::OcProblem {
                terminal: std::sync::Arc::new(cost),
                ..base.clone()
            })
        })
    }

    /// Solves the transfer by continuation along [`KeplerParams::target_path`].
    pub fn solve(
        &self,
        params: &crate::scheme::SchemeParams,
        formulation: crate::residual::Formulation,
        cfg: &crate::solver::SolverConfig,
    ) -> Result<crate::ocp::Continuation, crate::ocp::OcpError> {
        let path = self.target_path(params.horizon())?;
        crate::ocp::solve_continuation(
            path,
            params,
            formulation,
            crate::solver::GuessStrategy::ZeroCostate,
            cfg,
            &crate::ocp::ContinuationConfig::default(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_derivatives, check_terminal_gradients, eval_b, eval_grad_b, minimising_control, TerminalCost};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn sys() -> KeplerSystem {
        kepler_system(1.0, 10.0).unwrap()
    }

    #[test]
    fn drift_and_anchor_values() {
        let q = v(&[4.0, 0.0]);
        assert_eq!(sys().drift(&q, &Vector::zeros(2)), v(&[-0.625, 0.0]));
        assert_eq!(sys().anchor(&q), Matrix::from_column_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(sys().metric(&v(&[1.0, 7.0])), Matrix::identity(1, 1));
    }

    #[test]
    fn b_at_axis_points() {
        let b = eval_b(&sys(), &v(&[4.0, 0.0])).unwrap();
        assert_eq!(b, Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        let b = eval_b(&sys(), &v(&[0.0, 4.0])).unwrap();
        assert_eq!(b, Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn control_at_axis_point() {
        let u = minimising_control(&sys(), &v(&[4.0, 0.0]), &v(&[3.0, 5.0])).unwrap();
        assert_eq!(u, v(&[5.0]));
    }

    #[test]
    fn grad_b_matches_fd() {
        let q = v(&[4.0, 0.0]);
        let lam = v(&[1.0, 1.0]);
        let g = eval_grad_b(&sys(), &q, &lam).unwrap();
        let fd = crate::fd::five_point_gradient(|x| lam.dot(&(eval_b(&sys(), x).unwrap() * &lam)), &q);
        assert!(crate::fd::mixed_error(g.as_slice(), fd.as_slice()) <= 1e-6);
    }

    #[test]
    fn derivatives_pass_check() {
        let probes = vec![(v(&[4.0, 0.0]), v(&[0.0, 1.58])), (v(&[-2.0, 3.5]), v(&[0.7, -0.2]))];
        let report = check_derivatives(&sys(), &probes);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn origin_is_rejected() {
        assert!(sys().check_point(&Vector::zeros(2)).is_err());
        assert!(sys().check_point(&v(&[1.0, 0.0])).is_ok());
        assert!(kepler_system(0.0, 1.0).is_err());
    }

    #[test]
    fn horizon_formula() {
        let t = transfer_horizon(1.5, 1.0, 10.0, 4.0, 5.0);
        assert!((t - 28.45).abs() < 0.005, "{t}");
        assert_eq!(transfer_horizon(0.0, 1.0, 10.0, 4.0, 5.0), 0.0);
    }

    #[test]
    fn circular_initial_state() {
        let (q0, v0) = initial_circular_state(1.0, 10.0, 4.0);
        assert_eq!(q0, v(&[4.0, 0.0]));
        assert_relative_eq!(v0[1], 1.58114, epsilon = 1e-5);
        assert_relative_eq!(v0.norm_squared() * 4.0, 10.0, max_relative = 1e-15);
    }

    #[test]
    fn terminal_cost_values() {
        let p = KeplerParams::default();
        let cost = quadratic_terminal_cost(p.q_target.clone(), p.v_target.clone(), p.kq.clone(), p.kv.clone()).unwrap();
        assert_eq!(cost.value(&p.q_target, &p.v_target), 0.0);
        assert_eq!(cost.value(&(&p.q_target + v(&[1.0, 0.0])), &p.v_target), 1.0);
        let probes = vec![(v(&[0.3, -1.2]), v(&[2.0, 0.1])), (v(&[-4.0, 1.0]), v(&[0.0, -1.0]))];
        assert!(check_terminal_gradients(&cost, &probes) <= 1e-8);
    }

    fn rotation(a: f64) -> Matrix {
        Matrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()])
    }

    proptest! {
        #[test]
        fn rotational_equivariance(
            x in -5.0..5.0f64, y in -5.0..5.0f64, u in -3.0..3.0f64, a in -3.2..3.2f64,
        ) {
            let q = v(&[x, y]);
            prop_assume!(q.norm() > 0.1);
            let r = rotation(a);
            let z = Vector::zeros(2);
            let lhs = sys().drift(&(&r * &q), &z);
            let rhs = &r * sys().drift(&q, &z);
            prop_assert!((lhs - &rhs).amax() <= 1e-12 * (1.0 + rhs.amax()));
            let u = v(&[u]);
            let lhs = sys().anchor(&(&r * &q)) * &u;
            let rhs = &r * sys().anchor(&q) * &u;
            prop_assert!((lhs - &rhs).amax() <= 1e-12 * (1.0 + rhs.amax()));
        }
    }
}
