//! Run configuration, read from TOML.
//!
//! See `docs/formats.md` for the schema. Every section except `[model]`,
//! `[scheme]`, `[grid]` and `[output]` is optional.

use std::path::PathBuf;
use std::sync::Arc;

use serde::Deserialize;
use varoc::diagnostics::{AffineSymmetry, PsiDependence, SchemeSpec};
use varoc::exec::Execution;
use varoc::kepler::KeplerParams;
use varoc::solver::{GuessStrategy, LinearSolver};
use varoc::{Formulation, LinearSystem, Matrix, OcProblem, QuadraticTerminalCost, SchemeParams, SolverConfig, Vector};

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub formulation: FormulationChoice,
    pub scheme: SchemeConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    pub symmetry: Option<SymmetryConfig>,
    pub output: OutputConfig,
    pub study: Option<StudyConfig>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum FormulationChoice {
    #[default]
    Independent,
    Dependent,
}

impl From<FormulationChoice> for Formulation {
    fn from(f: FormulationChoice) -> Self {
        match f {
            FormulationChoice::Independent => Formulation::Independent,
            FormulationChoice::Dependent => Formulation::Dependent,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Kepler(KeplerConfig),
    Linear(LinearConfig),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeplerConfig {
    #[serde(default = "one")]
    pub g: f64,
    #[serde(default = "ten")]
    pub m: f64,
    #[serde(default = "one_and_half")]
    pub d_revs: f64,
    #[serde(default = "four")]
    pub r0: f64,
    #[serde(default = "five")]
    pub rt: f64,
    #[serde(default = "four")]
    pub x0: f64,
    #[serde(default = "default_q_target")]
    pub q_target: Vec<f64>,
    /// Defaults to the circular velocity at `q_target`.
    pub v_target: Option<Vec<f64>>,
    pub kq: Option<Vec<Vec<f64>>>,
    pub kv: Option<Vec<Vec<f64>>>,
}

fn one() -> f64 {
    1.0
}
fn ten() -> f64 {
    10.0
}
fn one_and_half() -> f64 {
    1.5
}
fn four() -> f64 {
    4.0
}
fn five() -> f64 {
    5.0
}
fn default_q_target() -> Vec<f64> {
    vec![-5.0, 0.0]
}

/// `q'' = A q + B v + rho u` with cost `u^T g u / 2` and a quadratic terminal cost.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub q0: Vec<f64>,
    pub v0: Vec<f64>,
    pub q_target: Vec<f64>,
    pub v_target: Vec<f64>,
    pub kq: Vec<Vec<f64>>,
    pub kv: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_steps: Option<usize>,
    pub h: Option<f64>,
    /// Required for linear models; Kepler defaults to the transfer formula.
    pub horizon: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolverChoice {
    #[default]
    Auto,
    Dense,
    Banded,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum GuessChoice {
    #[default]
    ZeroCostate,
    Linear,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub damping: f64,
    pub min_step: f64,
    pub armijo: f64,
    pub linear_solver: LinearSolverChoice,
    pub scale_rows: bool,
    pub parallel: bool,
    pub guess: GuessChoice,
    /// Target continuation; defaults to on for Kepler and off otherwise.
    pub continuation: Option<bool>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSettings {
            tol: d.tol,
            max_iter: d.max_iter,
            fd_step: d.fd_step,
            damping: d.damping,
            min_step: d.min_step,
            armijo: d.armijo,
            linear_solver: LinearSolverChoice::Auto,
            scale_rows: d.scale_rows,
            parallel: true,
            guess: GuessChoice::ZeroCostate,
            continuation: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryConfig {
    pub b: Vec<Vec<f64>>,
    pub d: Vec<f64>,
    #[serde(default)]
    pub beta_equals_gamma: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Must exist; relative paths resolve against the config file.
    pub dir: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_prefix() -> String {
    "run".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub schemes: Vec<StudyScheme>,
    pub n_list: Vec<usize>,
    pub reference_n: usize,
    /// `[alpha, beta, gamma]` of the reference solve.
    #[serde(default = "midpoint")]
    pub reference_scheme: [f64; 3],
    #[serde(default)]
    pub parallel: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyScheme {
    pub id: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

fn midpoint() -> [f64; 3] {
    [0.5, 0.5, 0.5]
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn vector(what: &str, x: &[f64], n: usize) -> Result<Vector, CliError> {
    if x.len() != n {
        return Err(invalid(format!("{what} needs {n} entries, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{what} has non-finite entries")));
    }
    Ok(Vector::from_column_slice(x))
}

fn matrix(what: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<Matrix, CliError> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(format!("{what} must be {r}x{c}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{what} has non-finite entries")));
    }
    Ok(Matrix::from_row_slice(r, c, &flat))
}

fn unit_interval(name: &str, x: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(invalid(format!("{name} = {x} is outside [0, 1]")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        unit_interval("alpha", self.scheme.alpha)?;
        unit_interval("beta", self.scheme.beta)?;
        unit_interval("gamma", self.scheme.gamma)?;
        match (self.grid.n_steps, self.grid.h) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(invalid("give exactly one of grid.n_steps and grid.h")),
        }
        if matches!(self.model, ModelConfig::Linear(_)) && self.grid.horizon.is_none() {
            return Err(invalid("grid.horizon is required for linear models"));
        }
        self.solver_config().validate().map_err(CliError::Config)?;
        if self.solver.continuation == Some(true) && !matches!(self.model, ModelConfig::Kepler(_)) {
            return Err(invalid("continuation is only available for the kepler model"));
        }
        if let Some(study) = &self.study {
            if study.n_list.is_empty() {
                return Err(invalid("study.n_list is empty"));
            }
            if study.schemes.is_empty() {
                return Err(invalid("study.schemes is empty"));
            }
            let [a, b, g] = study.reference_scheme;
            SchemeParams::new(a, b, g, study.reference_n, self.horizon())?;
            for s in &study.schemes {
                unit_interval("study alpha", s.alpha)?;
                unit_interval("study beta", s.beta)?;
                unit_interval("study gamma", s.gamma)?;
            }
        }
        self.problem()?;
        self.params()?;
        self.symmetry()?;
        Ok(())
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation.into()
    }

    pub fn horizon(&self) -> f64 {
        match (&self.model, self.grid.horizon) {
            (_, Some(t)) => t,
            (ModelConfig::Kepler(k), None) => varoc::kepler::transfer_horizon(k.d_revs, k.g, k.m, k.r0, k.rt),
            (ModelConfig::Linear(_), None) => f64::NAN,
        }
    }

    pub fn kepler_params(&self) -> Option<Result<KeplerParams, CliError>> {
        let ModelConfig::Kepler(k) = &self.model else {
            return None;
        };
        Some((|| {
            let q_target = vector("q_target", &k.q_target, 2)?;
            let v_target = match &k.v_target {
                Some(v) => vector("v_target", v, 2)?,
                None => {
                    let r = q_target.norm();
                    if r == 0.0 {
                        return Err(invalid("q_target at the origin"));
                    }
                    let speed = (k.g * k.m / r).sqrt();
                    Vector::from_vec(vec![-q_target[1] / r * speed, q_target[0] / r * speed])
                }
            };
            let weight = |w: &Option<Vec<Vec<f64>>>, what| match w {
                Some(rows) => matrix(what, rows, 2, 2),
                None => Ok(Matrix::identity(2, 2)),
            };
            Ok(KeplerParams {
                g: k.g,
                m: k.m,
                d_revs: k.d_revs,
                r0: k.r0,
                rt: k.rt,
                x0: k.x0,
                q_target,
                v_target,
                kq: weight(&k.kq, "kq")?,
                kv: weight(&k.kv, "kv")?,
            })
        })())
    }

    pub fn problem(&self) -> Result<OcProblem, CliError> {
        let t = self.horizon();
        match &self.model {
            ModelConfig::Kepler(k) => {
                if !(k.g > 0.0 && k.m > 0.0 && k.r0 > 0.0 && k.rt > 0.0 && k.x0 > 0.0) {
                    return Err(invalid("G, M, r0, rT and x0 must be positive"));
                }
                let kp = self.kepler_params().expect("kepler")?;
                Ok(kp.problem(t)?)
            }
            ModelConfig::Linear(l) => {
                let n = l.q0.len();
                let m = l.rho.first().map_or(0, |r| r.len());
                let sys = LinearSystem {
                    a: matrix("a", &l.a, n, n)?,
                    b: matrix("b", &l.b, n, n)?,
                    rho: matrix("rho", &l.rho, n, m)?,
                    g: matrix("g", &l.g, m, m)?,
                };
                if sys.g.clone().cholesky().is_none() || (&sys.g - sys.g.transpose()).amax() > 0.0 {
                    return Err(invalid("g must be symmetric positive definite"));
                }
                let cost = QuadraticTerminalCost::new(
                    vector("q_target", &l.q_target, n)?,
                    vector("v_target", &l.v_target, n)?,
                    matrix("kq", &l.kq, n, n)?,
                    matrix("kv", &l.kv, n, n)?,
                )?;
                Ok(OcProblem::new(
                    Arc::new(sys),
                    Arc::new(cost),
                    vector("q0", &l.q0, n)?,
                    vector("v0", &l.v0, n)?,
                    t,
                )?)
            }
        }
    }

    pub fn params(&self) -> Result<SchemeParams, CliError> {
        let s = &self.scheme;
        let t = self.horizon();
        let p = match (self.grid.n_steps, self.grid.h) {
            (Some(n), _) => SchemeParams::new(s.alpha, s.beta, s.gamma, n, t)?,
            (None, Some(h)) => SchemeParams::with_step(s.alpha, s.beta, s.gamma, h, t)?,
            (None, None) => return Err(invalid("give exactly one of grid.n_steps and grid.h")),
        };
        Ok(p)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            tol: s.tol,
            max_iter: s.max_iter,
            fd_step: s.fd_step,
            damping: s.damping,
            min_step: s.min_step,
            armijo: s.armijo,
            linear_solver: match s.linear_solver {
                LinearSolverChoice::Auto => LinearSolver::Auto,
                LinearSolverChoice::Dense => LinearSolver::Dense,
                LinearSolverChoice::Banded => LinearSolver::Banded,
            },
            scale_rows: s.scale_rows,
            execution: if s.parallel { Execution::Parallel } else { Execution::Sequential },
            verbose: false,
        }
    }

    pub fn guess(&self) -> GuessStrategy {
        match self.solver.guess {
            GuessChoice::ZeroCostate => GuessStrategy::ZeroCostate,
            GuessChoice::Linear => GuessStrategy::LinearInterp,
        }
    }

    pub fn use_continuation(&self) -> bool {
        self.solver
            .continuation
            .unwrap_or(matches!(self.model, ModelConfig::Kepler(_)))
    }

    /// Configured generator, or planar rotations for Kepler.
    pub fn symmetry(&self) -> Result<Option<AffineSymmetry>, CliError> {
        let n = match &self.model {
            ModelConfig::Kepler(_) => 2,
            ModelConfig::Linear(l) => l.q0.len(),
        };
        match (&self.symmetry, &self.model) {
            (Some(s), _) => {
                let psi = if s.beta_equals_gamma {
                    PsiDependence::BetaEqualsGamma
                } else {
                    PsiDependence::PointIndependent
                };
                Ok(Some(AffineSymmetry::new(matrix("symmetry.b", &s.b, n, n)?, vector("symmetry.d", &s.d, n)?, psi)?))
            }
            (None, ModelConfig::Kepler(_)) => Ok(Some(AffineSymmetry::rotation_2d())),
            (None, ModelConfig::Linear(_)) => Ok(None),
        }
    }

    pub fn study_schemes(&self) -> Vec<SchemeSpec> {
        self.study
            .iter()
            .flat_map(|s| &s.schemes)
            .map(|s| SchemeSpec::new(s.id.clone(), s.alpha, s.beta, s.gamma))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[model]
kind = "kepler"

[scheme]
alpha = 1.0
beta = 1.0
gamma = 1.0

[grid]
h = 0.1
horizon = 28.0

[output]
dir = "out"
"#;

    #[test]
    fn kepler_defaults() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(cfg.params().unwrap().n_steps, 280);
        let kp = cfg.kepler_params().unwrap().unwrap();
        assert_eq!(kp.v_target[0], 0.0);
        assert!((kp.v_target[1] + 2f64.sqrt()).abs() < 1e-15);
        assert!(cfg.use_continuation());
        assert_eq!(cfg.formulation(), Formulation::Independent);
        assert!(cfg.symmetry().unwrap().is_some());
    }

    #[test]
    fn out_of_range_alpha() {
        let err = RunConfig::parse(&BASE.replace("alpha = 1.0", "alpha = 1.5")).unwrap_err();
        assert!(err.to_string().contains("alpha = 1.5"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn grid_needs_exactly_one_of_n_and_h() {
        assert!(RunConfig::parse(&BASE.replace("h = 0.1", "h = 0.1\nn_steps = 280")).is_err());
        assert!(RunConfig::parse(&BASE.replace("h = 0.1", "")).is_err());
        assert!(RunConfig::parse(&BASE.replace("h = 0.1", "h = 0.3")).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse(&BASE.replace("[grid]", "[grid]\nsteps = 3")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn linear_model_dimensions_checked() {
        let text = r#"
[model]
kind = "linear"
a = [[0.0]]
b = [[0.0]]
rho = [[1.0]]
g = [[1.0]]
q0 = [0.0]
v0 = [1.0]
q_target = [1.0]
v_target = [0.0]
kq = [[1.0]]
kv = [[1.0]]

[scheme]
alpha = 0.5
beta = 0.5
gamma = 0.5

[grid]
n_steps = 10
horizon = 1.0

[output]
dir = "."
"#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.problem().unwrap().state_dim(), 1);
        assert!(!cfg.use_continuation());
        assert!(RunConfig::parse(&text.replace("kv = [[1.0]]", "kv = [[1.0, 0.0]]")).is_err());
        assert!(RunConfig::parse(&text.replace("g = [[1.0]]", "g = [[-1.0]]")).is_err());
        assert!(RunConfig::parse(&text.replace("horizon = 1.0", "")).is_err());
    }
}
