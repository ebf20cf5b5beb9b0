//! Artifact writers and the trajectory CSV reader.
//!
//! Floats are written as `{:.17e}`, which round-trips every `f64` and keeps
//! the files byte-identical between runs.

use std::fs;
use std::path::Path;

use serde::Serialize;
use varoc::diagnostics::{DiagnosticsSeries, StudyReport};
use varoc::{DiscreteTrajectory, Solution, Vector};

use crate::CliError;

pub fn num(x: f64) -> String {
    format!("{x:.17e}")
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory writer")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// One row per node: `k, t, q_*, lam_*, u_*, v_*, I, H_tilde` and, for the
/// dependent formulation, `U1_*, U2_*` (empty on the last row).
pub fn trajectory_csv(sol: &Solution, m: usize, diag: Option<&DiagnosticsSeries>) -> Vec<u8> {
    let traj = &sol.trajectory;
    let (n, nn) = (traj.q[0].len(), traj.n_steps());
    let dep = !traj.u1.is_empty();
    let mu = if dep { traj.u1[0].len() } else { 0 };

    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend(indexed("q", n));
    header.extend(indexed("lam", n));
    header.extend(indexed("u", m));
    header.extend(indexed("v", n));
    header.push("I".into());
    header.push("H_tilde".into());
    header.extend(indexed("U1", mu));
    header.extend(indexed("U2", mu));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    let blank = |len: usize| std::iter::repeat_n(String::new(), len);
    for k in 0..=nn {
        let mut row = vec![k.to_string(), num(sol.params.node_time(k))];
        row.extend(traj.q[k].iter().map(|&x| num(x)));
        row.extend(traj.lam[k].iter().map(|&x| num(x)));
        match diag {
            Some(d) => row.extend(d.u[k].iter().map(|&x| num(x))),
            None => row.extend(blank(m)),
        }
        let v = match k {
            0 => Some(&sol.v0_minus),
            k if k == nn => Some(&sol.vn_plus),
            _ => None,
        };
        match v {
            Some(v) => row.extend(v.iter().map(|&x| num(x))),
            None => row.extend(blank(n)),
        }
        row.push(diag.and_then(|d| d.noether.get(k)).map_or(String::new(), |&x| num(x)));
        row.push(diag.map_or(String::new(), |d| num(d.h_tilde[k])));
        if k < nn {
            row.extend(traj.u1.get(k).into_iter().flatten().map(|&x| num(x)));
            row.extend(traj.u2.get(k).into_iter().flatten().map(|&x| num(x)));
        } else {
            row.extend(blank(2 * mu));
        }
        w.write_record(&row).expect("in-memory write");
    }
    finish(w)
}

/// `k, t, I, H_tilde, H, pq_*, plam_*`.
pub fn diagnostics_csv(sol: &Solution, d: &DiagnosticsSeries) -> Vec<u8> {
    let n = d.p_q[0].len();
    let mut header = vec!["k".to_string(), "t".into(), "I".into(), "H_tilde".into(), "H".into()];
    header.extend(indexed("pq", n));
    header.extend(indexed("plam", n));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for k in 0..d.h_tilde.len() {
        let mut row = vec![k.to_string(), num(sol.params.node_time(k))];
        row.push(d.noether.get(k).map_or(String::new(), |&x| num(x)));
        row.push(num(d.h_tilde[k]));
        row.push(num(d.h_pontryagin[k]));
        row.extend(d.p_q[k].iter().map(|&x| num(x)));
        row.extend(d.p_lam[k].iter().map(|&x| num(x)));
        w.write_record(&row).expect("in-memory write");
    }
    finish(w)
}

pub fn study_csv(report: &StudyReport) -> Vec<u8> {
    report.to_csv().into_bytes()
}

#[derive(Clone, Debug, Serialize)]
pub struct SchemeInfo {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridInfo {
    pub n_steps: usize,
    pub h: f64,
    pub horizon: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub converged: bool,
    pub status: String,
    pub formulation: String,
    pub scheme: SchemeInfo,
    pub grid: GridInfo,
    /// Max-norm of the optimality residual.
    pub residual_norm: f64,
    /// Newton iterations of the final solve.
    pub iterations: usize,
    pub total_iterations: usize,
    /// Largest continuation parameter reached; `None` without continuation.
    pub continuation_reached: Option<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub objective: f64,
    pub v0_minus: Vec<f64>,
    pub vn_plus: Vec<f64>,
    pub max_noether_drift: Option<f64>,
    pub max_h_tilde_drift: Option<f64>,
    pub max_h_drift: Option<f64>,
    pub momentum_defect: Option<f64>,
    pub diagnostics_error: Option<String>,
}

pub fn summary_json(s: &Summary) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(s).expect("summary serialises");
    out.push(b'\n');
    out
}

fn vec_of(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

impl Summary {
    pub fn new(
        sol: &Solution,
        converged: bool,
        status: String,
        total_iterations: usize,
        continuation_reached: Option<f64>,
        diag: Result<&DiagnosticsSeries, String>,
    ) -> Self {
        let p = &sol.params;
        let (d, err) = match diag {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(e)),
        };
        Summary {
            converged,
            status,
            formulation: sol.formulation.name().into(),
            scheme: SchemeInfo {
                alpha: p.alpha,
                beta: p.beta,
                gamma: p.gamma,
            },
            grid: GridInfo {
                n_steps: p.n_steps,
                h: p.h,
                horizon: p.horizon(),
            },
            residual_norm: sol.residual.max_norm(),
            iterations: sol.stats.iterations,
            total_iterations,
            continuation_reached,
            mu: vec_of(&sol.trajectory.mu),
            nu: vec_of(&sol.trajectory.nu),
            objective: sol.objective,
            v0_minus: vec_of(&sol.v0_minus),
            vn_plus: vec_of(&sol.vn_plus),
            max_noether_drift: d.filter(|d| !d.noether.is_empty()).map(|d| d.max_noether_drift),
            max_h_tilde_drift: d.map(|d| d.max_h_tilde_drift),
            max_h_drift: d.map(|d| d.max_h_drift),
            momentum_defect: d.map(|d| d.momentum_defect),
            diagnostics_error: err,
        }
    }
}

/// Reads `q`, `lam` and, when present, `U1`/`U2` back from a trajectory CSV.
///
/// The boundary multipliers are not stored and come back as zeros.
pub fn read_trajectory(path: &Path) -> Result<DiscreteTrajectory, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    let cols = |prefix: &str| -> Vec<usize> {
        let mut i = 1;
        let mut out = Vec::new();
        while let Some(c) = header.iter().position(|h| h == format!("{prefix}_{i}")) {
            out.push(c);
            i += 1;
        }
        out
    };
    let (qc, lc, u1c, u2c) = (cols("q"), cols("lam"), cols("U1"), cols("U2"));
    let bad = |m: String| CliError::Parse(format!("{}: {m}", path.display()));
    if qc.is_empty() || lc.len() != qc.len() || u1c.len() != u2c.len() {
        return Err(bad("unexpected columns".into()));
    }
    let mut traj = DiscreteTrajectory {
        q: Vec::new(),
        lam: Vec::new(),
        u1: Vec::new(),
        u2: Vec::new(),
        mu: Vector::zeros(qc.len()),
        nu: Vector::zeros(qc.len()),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let field = |c: usize| -> Result<Option<f64>, CliError> {
            let s = rec.get(c).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|e| bad(format!("`{s}`: {e}")))
        };
        let read = |cs: &[usize]| -> Result<Option<Vector>, CliError> {
            let vals: Vec<Option<f64>> = cs.iter().map(|&c| field(c)).collect::<Result<_, _>>()?;
            Ok(vals.into_iter().collect::<Option<Vec<f64>>>().map(Vector::from_vec))
        };
        traj.q.push(read(&qc)?.ok_or_else(|| bad("missing q".into()))?);
        traj.lam.push(read(&lc)?.ok_or_else(|| bad("missing lam".into()))?);
        if !u1c.is_empty() {
            if let (Some(a), Some(b)) = (read(&u1c)?, read(&u2c)?) {
                traj.u1.push(a);
                traj.u2.push(b);
            }
        }
    }
    if traj.q.len() < 2 || (!u1c.is_empty() && traj.u1.len() + 1 != traj.q.len()) {
        return Err(bad("inconsistent row count".into()));
    }
    Ok(traj)
}
