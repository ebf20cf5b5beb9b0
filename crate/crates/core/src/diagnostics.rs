//! Conserved quantities, Hamiltonians and empirical convergence orders along
//! discrete solutions.
//!
//! Nodal momenta use `p^-` of the first interval at node 0 and `p^+` of the
//! interval to the left everywhere else. The mismatch with `p^-` at interior
//! nodes is reported separately as the momentum defect.

use std::fmt::Write as _;

use thiserror::Error;

use crate::exec::{map_range, Execution};
use crate::model::{minimising_control, Matrix, ModelError, OcProblem, Vector};
use crate::residual::{all_terms, max_norm, DiscreteTrajectory};
use crate::scheme::{Momentum, SchemeParams};

/// Which hypothesis makes the action leave the control part invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsiDependence {
    PointIndependent,
    BetaEqualsGamma,
}

/// Generator `q -> B q + d` of a one-parameter group of affine maps.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSymmetry {
    pub b: Matrix,
    pub d: Vector,
    pub psi: PsiDependence,
}

impl AffineSymmetry {
    pub fn new(b: Matrix, d: Vector, psi: PsiDependence) -> Result<Self, ModelError> {
        if !b.is_square() || b.nrows() != d.len() {
            return Err(ModelError::Dimension {
                what: "symmetry generator",
                expected: d.len(),
                got: b.nrows(),
            });
        }
        if !(b.iter().all(|x| x.is_finite()) && d.iter().all(|x| x.is_finite())) {
            return Err(ModelError::Invalid("symmetry generator must be finite".into()));
        }
        Ok(AffineSymmetry { b, d, psi })
    }

    /// Planar rotations about the origin.
    pub fn rotation_2d() -> Self {
        AffineSymmetry {
            b: Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            d: Vector::zeros(2),
            psi: PsiDependence::PointIndependent,
        }
    }

    pub fn translation(d: Vector) -> Self {
        let n = d.len();
        AffineSymmetry {
            b: Matrix::zeros(n, n),
            d,
            psi: PsiDependence::PointIndependent,
        }
    }
}

/// Momenta `(p_q, p_lam)` at every node.
pub fn node_momenta(prob: &OcProblem, p: &SchemeParams, traj: &DiscreteTrajectory) -> Result<Vec<Momentum>, ModelError> {
    let terms = all_terms(prob, p, traj)?;
    let mut out = Vec::with_capacity(terms.len() + 1);
    out.push(terms[0].momentum_minus());
    out.extend(terms.iter().map(|t| t.momentum_plus()));
    Ok(out)
}

/// `I_k = p_q^T (B q_k + d) - p_lam^T B^T lam_k`.
pub fn noether_affine(traj: &DiscreteTrajectory, momenta: &[Momentum], sym: &AffineSymmetry) -> Vec<f64> {
    traj.q
        .iter()
        .zip(&traj.lam)
        .zip(momenta)
        .map(|((q, lam), m)| m.q.dot(&(&sym.b * q + &sym.d)) - m.lam.dot(&sym.b.tr_mul(lam)))
        .collect()
}

/// `I_k = lam_x p_lam_y - lam_y p_lam_x + x p_y - y p_x`.
pub fn noether_rotation_2d(traj: &DiscreteTrajectory, momenta: &[Momentum]) -> Result<Vec<f64>, ModelError> {
    let n = traj.q.first().map_or(0, |q| q.len());
    if n != 2 {
        return Err(ModelError::Dimension {
            what: "planar state",
            expected: 2,
            got: n,
        });
    }
    Ok(traj
        .q
        .iter()
        .zip(&traj.lam)
        .zip(momenta)
        .map(|((q, l), m)| l[0] * m.lam[1] - l[1] * m.lam[0] + q[0] * m.q[1] - q[1] * m.q[0])
        .collect())
}

/// New and Pontryagin Hamiltonians at every node, with nodal minimising controls.
pub fn hamiltonians(
    prob: &OcProblem,
    traj: &DiscreteTrajectory,
    momenta: &[Momentum],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let sys = prob.system.as_ref();
    let mut h_new = Vec::with_capacity(momenta.len());
    let mut h_pmp = Vec::with_capacity(momenta.len());
    for ((q, lam), m) in traj.q.iter().zip(&traj.lam).zip(momenta) {
        let u = minimising_control(sys, q, lam)?;
        let rho_u = sys.anchor(q) * &u;
        let cost = 0.5 * u.dot(&(sys.metric(q) * &u));
        let f = sys.drift(q, &m.lam);
        h_new.push(m.q.dot(&m.lam) - lam.dot(&(&f + &rho_u)) + cost);
        let (lam_q, lam_v, v) = (-&m.q, lam, &m.lam);
        h_pmp.push(lam_q.dot(v) + lam_v.dot(&(f + rho_u)) - cost);
    }
    Ok((h_new, h_pmp))
}

fn max_drift(series: &[f64]) -> f64 {
    series.first().map_or(0.0, |&x0| series.iter().map(|x| (x - x0).abs()).fold(0.0, f64::max))
}

/// Per-node diagnostics of one solution.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsSeries {
    /// Empty when no symmetry was supplied.
    pub noether: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h_pontryagin: Vec<f64>,
    pub p_q: Vec<Vector>,
    pub p_lam: Vec<Vector>,
    /// Nodal minimising controls.
    pub u: Vec<Vector>,
    pub max_noether_drift: f64,
    pub max_h_tilde_drift: f64,
    pub max_h_drift: f64,
    pub momentum_defect: f64,
}

pub fn diagnostics_series(
    prob: &OcProblem,
    p: &SchemeParams,
    traj: &DiscreteTrajectory,
    sym: Option<&AffineSymmetry>,
) -> Result<DiagnosticsSeries, ModelError> {
    let terms = all_terms(prob, p, traj)?;
    let mut momenta = Vec::with_capacity(terms.len() + 1);
    momenta.push(terms[0].momentum_minus());
    momenta.extend(terms.iter().map(|t| t.momentum_plus()));
    let mut defect: f64 = 0.0;
    for k in 1..terms.len() {
        let d = terms[k].momentum_minus().stacked() - momenta[k].stacked();
        defect = defect.max(max_norm(&d));
    }
    let noether = sym.map_or_else(Vec::new, |s| noether_affine(traj, &momenta, s));
    let (h_tilde, h_pontryagin) = hamiltonians(prob, traj, &momenta)?;
    let u = traj
        .q
        .iter()
        .zip(&traj.lam)
        .map(|(q, l)| minimising_control(prob.system.as_ref(), q, l))
        .collect::<Result<_, _>>()?;
    Ok(DiagnosticsSeries {
        max_noether_drift: max_drift(&noether),
        max_h_tilde_drift: max_drift(&h_tilde),
        max_h_drift: max_drift(&h_pontryagin),
        noether,
        h_tilde,
        h_pontryagin,
        p_q: momenta.iter().map(|m| m.q.clone()).collect(),
        p_lam: momenta.into_iter().map(|m| m.lam).collect(),
        u,
        momentum_defect: defect,
    })
}

/// A scheme in a convergence study.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeSpec {
    pub id: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl SchemeSpec {
    pub fn new(id: impl Into<String>, alpha: f64, beta: f64, gamma: f64) -> Self {
        SchemeSpec {
            id: id.into(),
            alpha,
            beta,
            gamma,
        }
    }

    pub fn params(&self, n_steps: usize, horizon: f64) -> Result<SchemeParams, ModelError> {
        SchemeParams::new(self.alpha, self.beta, self.gamma, n_steps, horizon)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub scheme_id: String,
    pub n_steps: usize,
    pub h: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    /// Fitted order per scheme id, in scheme order.
    pub slopes: Vec<(String, f64)>,
}

impl StudyReport {
    pub fn slope(&self, id: &str) -> Option<f64> {
        self.slopes.iter().find(|(s, _)| s == id).map(|(_, v)| *v)
    }

    /// `scheme,n,h,error,slope`; the slope is repeated on every row of a scheme.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scheme,n,h,error,slope\n");
        for r in &self.rows {
            let slope = self.slope(&r.scheme_id).unwrap_or(f64::NAN);
            let _ = writeln!(out, "{},{},{:.17e},{:.17e},{:.17e}", r.scheme_id, r.n_steps, r.h, r.error, slope);
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study setup: {0}")]
    Setup(String),
    #[error("solve failed for {scheme} at N = {n_steps}: {reason}")]
    Solve {
        scheme: String,
        n_steps: usize,
        reason: String,
        partial: StudyReport,
    },
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `max_k |q_k - q_ref(t_k)| + |lam_k - lam_ref(t_k)|` on the coarse nodes.
///
/// The reference step count must be a multiple of the coarse one.
pub fn trajectory_error(coarse: &DiscreteTrajectory, reference: &DiscreteTrajectory) -> Result<f64, ModelError> {
    let (n, r) = (coarse.n_steps(), reference.n_steps());
    if n == 0 || r % n != 0 {
        return Err(ModelError::Invalid(format!("reference with {r} steps does not refine {n} steps")));
    }
    let stride = r / n;
    Ok((0..=n)
        .map(|k| (&coarse.q[k] - &reference.q[k * stride]).norm() + (&coarse.lam[k] - &reference.lam[k * stride]).norm())
        .fold(0.0, f64::max))
}

/// Errors against a fine reference and fitted orders.
///
/// `solve` maps scheme parameters to a converged trajectory or a reason for
/// failure. Constituent solves run according to `exec`; the first failure in
/// scheme order aborts the study with the rows gathered before it.
pub fn convergence_study<F>(
    schemes: &[SchemeSpec],
    n_list: &[usize],
    reference: &SchemeParams,
    exec: Execution,
    solve: F,
) -> Result<StudyReport, StudyError>
where
    F: Fn(&SchemeParams) -> Result<DiscreteTrajectory, String> + Sync + Send,
{
    let setup = |m: String| StudyError::Setup(m);
    if n_list.len() < 2 {
        return Err(setup("at least two step counts are needed".into()));
    }
    let n_max = *n_list.iter().max().expect("non-empty");
    if reference.n_steps < 10 * n_max {
        return Err(setup(format!(
            "reference N = {} must be at least ten times the largest N = {n_max}",
            reference.n_steps
        )));
    }
    if let Some(n) = n_list.iter().find(|&&n| n == 0 || !reference.n_steps.is_multiple_of(n)) {
        return Err(setup(format!("reference N = {} is not a multiple of N = {n}", reference.n_steps)));
    }
    let horizon = reference.horizon();
    let ref_traj = solve(reference).map_err(|reason| StudyError::Solve {
        scheme: "reference".into(),
        n_steps: reference.n_steps,
        reason,
        partial: StudyReport::default(),
    })?;

    let jobs: Vec<(usize, usize)> = (0..schemes.len()).flat_map(|s| (0..n_list.len()).map(move |i| (s, i))).collect();
    let results = map_range(jobs.len(), exec, |j| {
        let (s, i) = jobs[j];
        let p = schemes[s].params(n_list[i], horizon).map_err(|e| e.to_string())?;
        let traj = solve(&p)?;
        let error = trajectory_error(&traj, &ref_traj).map_err(|e| e.to_string())?;
        Ok::<_, String>(StudyRow {
            scheme_id: schemes[s].id.clone(),
            n_steps: n_list[i],
            h: p.h,
            error,
        })
    });

    let mut report = StudyReport::default();
    for (s, spec) in schemes.iter().enumerate() {
        let mut rows = Vec::new();
        for (i, &n) in n_list.iter().enumerate() {
            match &results[s * n_list.len() + i] {
                Ok(row) => rows.push(row.clone()),
                Err(reason) => {
                    report.rows.extend(rows);
                    return Err(StudyError::Solve {
                        scheme: spec.id.clone(),
                        n_steps: n,
                        reason: reason.clone(),
                        partial: report,
                    });
                }
            }
        }
        let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let es: Vec<f64> = rows.iter().map(|r| r.error).collect();
        report.slopes.push((spec.id.clone(), loglog_slope(&hs, &es)));
        report.rows.extend(rows);
    }
    Ok(report)
}
