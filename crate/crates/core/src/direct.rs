//! Direct transcription oracles.
//!
//! Two classical discretise-then-optimise objectives that coincide with the
//! control-dependent discrete Lagrangian approach:
//!
//! * `dir2` appends the discrete second-order state equation at interior nodes
//!   with multipliers `Lambda_k`;
//! * `dir1` works with positions and velocities and appends the first-order
//!   update pair with multipliers `(lam_q, lam_v)`.
//!
//! They are never solved. Instead their KKT residuals are evaluated at the
//! image of a solution of the dependent system, with stationarity obtained by
//! finite differences of the scalar objective.

use crate::exec::{map_range, Execution};
use crate::fd::{check_step, five_point_scalar};
use crate::model::{ModelError, OcProblem, Vector};
use crate::residual::{Builder, DiscreteTrajectory, Formulation, ResidualVector};
use crate::scheme::{average, difference, lagrangian_dep, velocity_minus_dep, velocity_plus_dep, SchemeParams};

/// Variables of the first-order transcription.
///
/// `lam_q[j]` and `lam_v[j]` belong to node `j + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dir1Variables {
    pub q: Vec<Vector>,
    pub v: Vec<Vector>,
    pub lam_q: Vec<Vector>,
    pub lam_v: Vec<Vector>,
    pub u1: Vec<Vector>,
    pub u2: Vec<Vector>,
    pub mu: Vector,
    pub nu: Vector,
}

/// Variables of the second-order transcription.
///
/// `lambda[j]` belongs to interior node `j + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dir2Variables {
    pub q: Vec<Vector>,
    pub lambda: Vec<Vector>,
    pub u1: Vec<Vector>,
    pub u2: Vec<Vector>,
    pub mu: Vector,
    pub nu: Vector,
}

fn require_dependent(traj: &DiscreteTrajectory) -> Result<(), ModelError> {
    if traj.formulation() == Formulation::Dependent {
        Ok(())
    } else {
        Err(ModelError::Invalid("direct transcriptions need interval controls".into()))
    }
}

fn require_len(what: &'static str, got: usize, expected: usize) -> Result<(), ModelError> {
    if got == expected {
        Ok(())
    } else {
        Err(ModelError::Dimension { what, expected, got })
    }
}

pub fn map_new_to_dir1(
    traj: &DiscreteTrajectory,
    prob: &OcProblem,
    p: &SchemeParams,
) -> Result<Dir1Variables, ModelError> {
    require_dependent(traj)?;
    let sys = prob.system.as_ref();
    let nn = traj.n_steps();
    let mut v: Vec<Vector> = (0..nn)
        .map(|k| {
            let c = traj.controls(k).expect("dependent");
            velocity_minus_dep(sys, &traj.q[k], &traj.q[k + 1], &c, p)
        })
        .collect();
    let c = traj.controls(nn - 1).expect("dependent");
    v.push(velocity_plus_dep(sys, &traj.q[nn - 1], &traj.q[nn], &c, p));
    Ok(Dir1Variables {
        q: traj.q.clone(),
        v,
        lam_q: (0..nn).map(|k| (&traj.lam[k] - &traj.lam[k + 1]) / p.h).collect(),
        lam_v: traj.lam[1..].to_vec(),
        u1: traj.u1.clone(),
        u2: traj.u2.clone(),
        mu: traj.mu.clone(),
        nu: traj.nu.clone(),
    })
}

pub fn map_new_to_dir2(traj: &DiscreteTrajectory) -> Result<Dir2Variables, ModelError> {
    require_dependent(traj)?;
    let nn = traj.n_steps();
    Ok(Dir2Variables {
        q: traj.q.clone(),
        lambda: traj.lam[1..nn].to_vec(),
        u1: traj.u1.clone(),
        u2: traj.u2.clone(),
        mu: traj.mu.clone(),
        nu: traj.nu.clone(),
    })
}

/// Stage forces `f(q_bar, dq) + rho(q_bar) U` of interval `k`.
fn forces(
    prob: &OcProblem,
    p: &SchemeParams,
    q: &[Vector],
    u1: &[Vector],
    u2: &[Vector],
    k: usize,
) -> [Vector; 2] {
    let sys = prob.system.as_ref();
    let dq = difference(&q[k], &q[k + 1], p.h);
    let [(_, t1), (_, t2)] = p.stages();
    let qa = average(&q[k], &q[k + 1], t1);
    let qb = average(&q[k], &q[k + 1], t2);
    [
        sys.drift(&qa, &dq) + sys.anchor(&qa) * &u1[k],
        sys.drift(&qb, &dq) + sys.anchor(&qb) * &u2[k],
    ]
}

fn running_cost(prob: &OcProblem, p: &SchemeParams, q: &[Vector], u1: &[Vector], u2: &[Vector]) -> f64 {
    let sys = prob.system.as_ref();
    let [(w1, t1), (w2, t2)] = p.stages();
    let mut sum = 0.0;
    for k in 0..u1.len() {
        let qa = average(&q[k], &q[k + 1], t1);
        let qb = average(&q[k], &q[k + 1], t2);
        sum += w1 * u1[k].dot(&(sys.metric(&qa) * &u1[k])) + w2 * u2[k].dot(&(sys.metric(&qb) * &u2[k]));
    }
    0.5 * p.h * sum
}

/// `v_0^-` and `v_N^+` written out from the stage forces.
fn end_velocities(prob: &OcProblem, p: &SchemeParams, q: &[Vector], u1: &[Vector], u2: &[Vector]) -> (Vector, Vector) {
    let nn = q.len() - 1;
    let [(w1, t1), (w2, t2)] = p.stages();
    let [a, b] = forces(prob, p, q, u1, u2, 0);
    let v0 = difference(&q[0], &q[1], p.h) - (a * (w1 * t1) + b * (w2 * t2)) * p.h;
    let [a, b] = forces(prob, p, q, u1, u2, nn - 1);
    let vn = difference(&q[nn - 1], &q[nn], p.h) + (a * (w1 * (1.0 - t1)) + b * (w2 * (1.0 - t2))) * p.h;
    (v0, vn)
}

/// Discrete second-order state equations at interior nodes.
fn sode(prob: &OcProblem, p: &SchemeParams, q: &[Vector], u1: &[Vector], u2: &[Vector]) -> Vec<Vector> {
    let nn = q.len() - 1;
    let [(w1, t1), (w2, t2)] = p.stages();
    let f: Vec<[Vector; 2]> = (0..nn).map(|k| forces(prob, p, q, u1, u2, k)).collect();
    (1..nn)
        .map(|k| {
            (&q[k + 1] - &q[k] * 2.0 + &q[k - 1]) / (p.h * p.h)
                - (&f[k][0] * t1 + &f[k - 1][0] * (1.0 - t1)) * w1
                - (&f[k][1] * t2 + &f[k - 1][1] * (1.0 - t2)) * w2
        })
        .collect()
}

/// `(position_update, velocity_update)` of the first-order scheme, `k = 0..N-1`.
fn first_order_updates(
    prob: &OcProblem,
    p: &SchemeParams,
    q: &[Vector],
    v: &[Vector],
    u1: &[Vector],
    u2: &[Vector],
) -> (Vec<Vector>, Vec<Vector>) {
    let nn = q.len() - 1;
    let [(w1, t1), (w2, t2)] = p.stages();
    let mut pos = Vec::with_capacity(nn);
    let mut vel = Vec::with_capacity(nn);
    for k in 0..nn {
        let [a, b] = forces(prob, p, q, u1, u2, k);
        pos.push(difference(&q[k], &q[k + 1], p.h) - &v[k] - (&a * (w1 * t1) + &b * (w2 * t2)) * p.h);
        vel.push(difference(&v[k], &v[k + 1], p.h) - a * w1 - b * w2);
    }
    (pos, vel)
}

pub fn objective_dir2(vars: &Dir2Variables, prob: &OcProblem, p: &SchemeParams) -> f64 {
    let nn = vars.q.len() - 1;
    let (v0, vn) = end_velocities(prob, p, &vars.q, &vars.u1, &vars.u2);
    let constraints: f64 = sode(prob, p, &vars.q, &vars.u1, &vars.u2)
        .iter()
        .zip(&vars.lambda)
        .map(|(c, l)| l.dot(c))
        .sum();
    prob.terminal.value(&vars.q[nn], &vn)
        + vars.mu.dot(&(&vars.q[0] - &prob.q0))
        + vars.nu.dot(&(v0 - &prob.v0))
        + running_cost(prob, p, &vars.q, &vars.u1, &vars.u2)
        + p.h * constraints
}

pub fn objective_dir1(vars: &Dir1Variables, prob: &OcProblem, p: &SchemeParams) -> f64 {
    let nn = vars.q.len() - 1;
    let (pos, vel) = first_order_updates(prob, p, &vars.q, &vars.v, &vars.u1, &vars.u2);
    let mut constraints = 0.0;
    for k in 0..nn {
        constraints += vars.lam_q[k].dot(&pos[k]) + vars.lam_v[k].dot(&vel[k]);
    }
    prob.terminal.value(&vars.q[nn], &vars.v[nn])
        + vars.mu.dot(&(&vars.q[0] - &prob.q0))
        + vars.nu.dot(&(&vars.v[0] - &prob.v0))
        + running_cost(prob, p, &vars.q, &vars.u1, &vars.u2)
        + p.h * constraints
}

/// `phi + mu (q_0 - q^0) + nu (v_0^- - qdot^0) + lam_N v_N^+ - lam_0 v_0^- - sum_k L_d`
/// for a dependent trajectory.
pub fn augmented_objective(prob: &OcProblem, p: &SchemeParams, traj: &DiscreteTrajectory) -> Result<f64, ModelError> {
    require_dependent(traj)?;
    let sys = prob.system.as_ref();
    let nn = traj.n_steps();
    let mut sum_l = 0.0;
    for k in 0..nn {
        sum_l += lagrangian_dep(sys, &traj.pair(k), &traj.controls(k).expect("dependent"), p)?;
    }
    let first = traj.controls(0).expect("dependent");
    let last = traj.controls(nn - 1).expect("dependent");
    let v0 = velocity_minus_dep(sys, &traj.q[0], &traj.q[1], &first, p);
    let vn = velocity_plus_dep(sys, &traj.q[nn - 1], &traj.q[nn], &last, p);
    Ok(prob.terminal.value(&traj.q[nn], &vn)
        + traj.mu.dot(&(&traj.q[0] - &prob.q0))
        + traj.nu.dot(&(&v0 - &prob.v0))
        + traj.lam[nn].dot(&vn)
        - traj.lam[0].dot(&v0)
        - sum_l)
}

/// Five-point gradient of `f` over a list of vector slots.
fn fd_gradient<F>(slots: &[Vector], exec: Execution, f: F) -> Vec<Vector>
where
    F: Fn(&[Vector]) -> f64 + Sync + Send,
{
    let index: Vec<(usize, usize)> = slots
        .iter()
        .enumerate()
        .flat_map(|(s, v)| (0..v.len()).map(move |i| (s, i)))
        .collect();
    let flat = map_range(index.len(), exec, |j| {
        let (s, i) = index[j];
        let work = std::cell::RefCell::new(slots.to_vec());
        let x = slots[s][i];
        five_point_scalar(
            |t| {
                work.borrow_mut()[s][i] = t;
                f(&work.borrow())
            },
            x,
            check_step(x),
        )
    });
    let mut out: Vec<Vector> = slots.iter().map(|v| Vector::zeros(v.len())).collect();
    for ((s, i), g) in index.into_iter().zip(flat) {
        out[s][i] = g;
    }
    out
}

fn check_controls(nn: usize, u1: &[Vector], u2: &[Vector]) -> Result<(), ModelError> {
    require_len("first controls", u1.len(), nn)?;
    require_len("second controls", u2.len(), nn)
}

/// KKT residual of the second-order transcription.
///
/// Blocks: `stationarity_q`, `stationarity_u1`, `stationarity_u2`, `sode`,
/// `initial_position`, `initial_velocity`.
pub fn kkt_residual_dir2(vars: &Dir2Variables, prob: &OcProblem, p: &SchemeParams) -> Result<ResidualVector, ModelError> {
    let nn = vars.q.len().saturating_sub(1);
    require_len("state nodes", vars.q.len(), p.n_steps + 1)?;
    require_len("interior multipliers", vars.lambda.len(), nn - 1)?;
    check_controls(nn, &vars.u1, &vars.u2)?;
    let slots: Vec<Vector> = vars.q.iter().chain(&vars.u1).chain(&vars.u2).cloned().collect();
    let grad = fd_gradient(&slots, Execution::Parallel, |x| {
        let trial = Dir2Variables {
            q: x[..=nn].to_vec(),
            u1: x[nn + 1..2 * nn + 1].to_vec(),
            u2: x[2 * nn + 1..].to_vec(),
            ..vars.clone()
        };
        objective_dir2(&trial, prob, p)
    });
    let (v0, _) = end_velocities(prob, p, &vars.q, &vars.u1, &vars.u2);
    let mut out = Builder::new(0);
    out.push("stationarity_q", &grad[..=nn]);
    out.push("stationarity_u1", &grad[nn + 1..2 * nn + 1]);
    out.push("stationarity_u2", &grad[2 * nn + 1..]);
    out.push("sode", &sode(prob, p, &vars.q, &vars.u1, &vars.u2));
    out.push("initial_position", [&(&vars.q[0] - &prob.q0)]);
    out.push("initial_velocity", [&(v0 - &prob.v0)]);
    Ok(out.finish())
}

/// KKT residual of the first-order transcription.
///
/// Blocks: `stationarity_q`, `stationarity_v`, `stationarity_u1`,
/// `stationarity_u2`, `position_update`, `velocity_update`,
/// `initial_position`, `initial_velocity`.
pub fn kkt_residual_dir1(vars: &Dir1Variables, prob: &OcProblem, p: &SchemeParams) -> Result<ResidualVector, ModelError> {
    let nn = vars.q.len().saturating_sub(1);
    require_len("state nodes", vars.q.len(), p.n_steps + 1)?;
    require_len("velocity nodes", vars.v.len(), nn + 1)?;
    require_len("position multipliers", vars.lam_q.len(), nn)?;
    require_len("velocity multipliers", vars.lam_v.len(), nn)?;
    check_controls(nn, &vars.u1, &vars.u2)?;
    let slots: Vec<Vector> = vars
        .q
        .iter()
        .chain(&vars.v)
        .chain(&vars.u1)
        .chain(&vars.u2)
        .cloned()
        .collect();
    let m1 = nn + 1;
    let grad = fd_gradient(&slots, Execution::Parallel, |x| {
        let trial = Dir1Variables {
            q: x[..m1].to_vec(),
            v: x[m1..2 * m1].to_vec(),
            u1: x[2 * m1..2 * m1 + nn].to_vec(),
            u2: x[2 * m1 + nn..].to_vec(),
            ..vars.clone()
        };
        objective_dir1(&trial, prob, p)
    });
    let (pos, vel) = first_order_updates(prob, p, &vars.q, &vars.v, &vars.u1, &vars.u2);
    let mut out = Builder::new(0);
    out.push("stationarity_q", &grad[..m1]);
    out.push("stationarity_v", &grad[m1..2 * m1]);
    out.push("stationarity_u1", &grad[2 * m1..2 * m1 + nn]);
    out.push("stationarity_u2", &grad[2 * m1 + nn..]);
    out.push("position_update", &pos);
    out.push("velocity_update", &vel);
    out.push("initial_position", [&(&vars.q[0] - &prob.q0)]);
    out.push("initial_velocity", [&(&vars.v[0] - &prob.v0)]);
    Ok(out.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearSystem, Matrix, QuadraticTerminalCost, ZeroTerminalCost};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn free_problem(q0: Vector, v0: Vector) -> OcProblem {
        let mut sys = LinearSystem::free_particle(2);
        sys.rho = Matrix::identity(2, 1);
        sys.g = Matrix::identity(1, 1);
        OcProblem::new(Arc::new(sys), Arc::new(ZeroTerminalCost { dim: 2 }), q0, v0, 1.0).unwrap()
    }

    fn free_solution(prob: &OcProblem, p: &SchemeParams) -> DiscreteTrajectory {
        let nn = p.n_steps;
        DiscreteTrajectory {
            q: (0..=nn).map(|k| &prob.q0 + &prob.v0 * p.node_time(k)).collect(),
            lam: vec![Vector::zeros(2); nn + 1],
            u1: vec![Vector::zeros(1); nn],
            u2: vec![Vector::zeros(1); nn],
            mu: Vector::zeros(2),
            nu: Vector::zeros(2),
        }
    }

    fn v2(a: f64, b: f64) -> Vector {
        Vector::from_vec(vec![a, b])
    }

    #[test]
    fn free_particle_maps_to_kkt_points() {
        let prob = free_problem(v2(0.5, -1.0), v2(0.25, 0.75));
        let p = SchemeParams::new(0.5, 1.0, 1.0, 8, 1.0).unwrap();
        let traj = free_solution(&prob, &p);
        let d1 = map_new_to_dir1(&traj, &prob, &p).unwrap();
        for v in &d1.v {
            assert!((v - &prob.v0).amax() < 1e-14);
        }
        assert!(d1.lam_q.iter().all(|l| l.amax() == 0.0));
        assert!(kkt_residual_dir1(&d1, &prob, &p).unwrap().max_norm() < 1e-12);
        let d2 = map_new_to_dir2(&traj).unwrap();
        assert_eq!(d2.lambda.len(), 7);
        assert!(kkt_residual_dir2(&d2, &prob, &p).unwrap().max_norm() < 1e-12);
    }

    #[test]
    fn control_perturbation_shows_in_stationarity() {
        let prob = free_problem(v2(0.0, 0.0), v2(1.0, 0.0));
        let p = SchemeParams::new(1.0, 1.0, 1.0, 6, 1.0).unwrap();
        let mut traj = free_solution(&prob, &p);
        traj.u1[3][0] += 1e-3;
        let r = kkt_residual_dir1(&map_new_to_dir1(&traj, &prob, &p).unwrap(), &prob, &p).unwrap();
        let s = r.block("stationarity_u1").unwrap();
        assert!(s[3].abs() > 1e-5, "{s:?}");
    }

    #[test]
    fn rejects_independent_trajectories() {
        let prob = free_problem(v2(0.0, 0.0), v2(1.0, 0.0));
        let p = SchemeParams::new(1.0, 1.0, 1.0, 4, 1.0).unwrap();
        let mut traj = free_solution(&prob, &p);
        traj.u1.clear();
        traj.u2.clear();
        assert!(map_new_to_dir2(&traj).is_err());
    }

    fn random_traj(seed: &[f64], nn: usize) -> DiscreteTrajectory {
        let at = |i: usize| seed[i % seed.len()] * ((i as f64) * 0.7).cos();
        let v = |k: usize, o: usize| v2(at(4 * k + o), at(4 * k + o + 1));
        DiscreteTrajectory {
            q: (0..=nn).map(|k| v(k, 0) + v2(1.5, 0.5)).collect(),
            lam: (0..=nn).map(|k| v(k, 2)).collect(),
            u1: (0..nn).map(|k| Vector::from_element(1, at(3 * k + 5))).collect(),
            u2: (0..nn).map(|k| Vector::from_element(1, at(3 * k + 7))).collect(),
            mu: v(nn + 3, 1),
            nu: v(nn + 5, 0),
        }
    }

    fn forced_problem() -> OcProblem {
        let sys = crate::kepler::kepler_system(1.0, 2.0).unwrap();
        let cost = QuadraticTerminalCost::new(v2(-1.0, 0.5), v2(0.0, 1.0), Matrix::identity(2, 2), Matrix::identity(2, 2) * 2.0).unwrap();
        OcProblem::new(Arc::new(sys), Arc::new(cost), v2(1.5, 0.0), v2(0.0, 1.0), 1.2).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn objectives_agree_off_solution(
            seed in prop::collection::vec(-0.5..0.5f64, 7..13),
            a in prop::sample::select(vec![0.0, 0.5, 1.0]),
            g in prop::sample::select(vec![0.0, 0.5, 1.0]),
        ) {
            let prob = forced_problem();
            let p = SchemeParams::new(a, g, g, 6, 1.2).unwrap();
            let traj = random_traj(&seed, 6);
            let reference = augmented_objective(&prob, &p, &traj).unwrap();
            let j2 = objective_dir2(&map_new_to_dir2(&traj).unwrap(), &prob, &p);
            let j1 = objective_dir1(&map_new_to_dir1(&traj, &prob, &p).unwrap(), &prob, &p);
            let scale = 1.0 + reference.abs();
            prop_assert!((j2 - reference).abs() <= 1e-10 * scale, "{j2} vs {reference}");
            prop_assert!((j1 - reference).abs() <= 1e-10 * scale, "{j1} vs {reference}");
        }

        #[test]
        fn dir2_ignores_end_costates(
            seed in prop::collection::vec(-0.5..0.5f64, 7..13),
            l0 in -2.0..2.0f64, ln in -2.0..2.0f64,
        ) {
            let prob = forced_problem();
            let p = SchemeParams::new(0.5, 1.0, 1.0, 5, 1.2).unwrap();
            let traj = random_traj(&seed, 5);
            let mut moved = traj.clone();
            moved.lam[0] += v2(l0, -l0);
            moved.lam[5] += v2(ln, 0.3);
            let a = kkt_residual_dir2(&map_new_to_dir2(&traj).unwrap(), &prob, &p).unwrap();
            let b = kkt_residual_dir2(&map_new_to_dir2(&moved).unwrap(), &prob, &p).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
