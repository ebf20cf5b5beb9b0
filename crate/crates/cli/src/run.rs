//! The three subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varoc::diagnostics::{convergence_study, diagnostics_series, StudyError, StudyReport};
use varoc::exec::Execution;
use varoc::model::{check_derivatives, check_terminal_gradients, DERIVATIVE_TOLERANCE};
use varoc::ocp::{solve_continuation, ContinuationConfig};
use varoc::{solve_ocp, DiscreteTrajectory, Formulation, OcProblem, OcpError, SchemeParams, Solution, SolverConfig, Vector};

use crate::config::{ModelConfig, RunConfig};
use crate::output::{self, Summary};
use crate::CliError;

/// Files written by `solve`.
#[derive(Clone, Debug)]
pub struct SolveArtifacts {
    pub trajectory: PathBuf,
    pub diagnostics: Option<PathBuf>,
    pub summary_path: PathBuf,
    pub summary: Summary,
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    RunConfig::parse(&text)
}

/// Existing output directory, relative paths taken from the config's folder.
pub fn output_dir(cfg: &RunConfig, config_path: &Path) -> Result<PathBuf, CliError> {
    let dir = if cfg.output.dir.is_absolute() {
        cfg.output.dir.clone()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(&cfg.output.dir)
    };
    if !dir.is_dir() {
        return Err(CliError::io(&dir, "output directory does not exist"));
    }
    Ok(dir)
}

struct Outcome {
    solution: Solution,
    reached: Option<f64>,
    total_iterations: usize,
}

fn solve_once(
    cfg: &RunConfig,
    prob: &OcProblem,
    params: &SchemeParams,
    formulation: Formulation,
    solver: &SolverConfig,
) -> Result<Outcome, OcpError> {
    let kepler = cfg.kepler_params().transpose().map_err(|e| OcpError::Config(e.to_string()))?;
    match kepler {
        Some(kp) if cfg.use_continuation() => {
            let path = kp.target_path(params.horizon())?;
            let c = solve_continuation(path, params, formulation, cfg.guess(), solver, &ContinuationConfig::default())?;
            Ok(Outcome {
                total_iterations: c.total_iterations,
                reached: Some(c.reached.unwrap_or(0.0)),
                solution: c.solution,
            })
        }
        _ => {
            let solution = solve_ocp(prob, params, formulation, cfg.guess(), solver)?;
            let total_iterations = solution.stats.iterations;
            Ok(Outcome {
                solution,
                reached: None,
                total_iterations,
            })
        }
    }
}

fn solve_failure(e: OcpError) -> CliError {
    match e {
        OcpError::Config(m) => CliError::Config(m),
        OcpError::Model(m) => CliError::NotConverged(format!("solve aborted: {m}")),
    }
}

pub fn run_solve(config_path: &Path) -> Result<SolveArtifacts, CliError> {
    let cfg = load(config_path)?;
    let dir = output_dir(&cfg, config_path)?;
    let prob = cfg.problem()?;
    let params = cfg.params()?;
    let sym = cfg.symmetry()?;
    info!("solving {} steps, h = {}", params.n_steps, params.h);

    let out = solve_once(&cfg, &prob, &params, cfg.formulation(), &cfg.solver_config()).map_err(solve_failure)?;
    let sol = &out.solution;
    let converged = sol.converged() && out.reached.is_none_or(|s| s == 1.0);
    let status = match out.reached {
        Some(s) if s < 1.0 => format!("continuation stopped at s = {s}: {}", sol.stats.status.describe()),
        _ => sol.stats.status.describe(),
    };
    let diag = diagnostics_series(&prob, &sol.params, &sol.trajectory, sym.as_ref()).map_err(|e| e.to_string());

    let prefix = &cfg.output.prefix;
    let trajectory = dir.join(format!("{prefix}_trajectory.csv"));
    output::write_file(&trajectory, &output::trajectory_csv(sol, prob.control_dim(), diag.as_ref().ok()))?;
    let diagnostics = match &diag {
        Ok(d) => {
            let path = dir.join(format!("{prefix}_diagnostics.csv"));
            output::write_file(&path, &output::diagnostics_csv(sol, d))?;
            Some(path)
        }
        Err(_) => None,
    };
    let summary = Summary::new(sol, converged, status.clone(), out.total_iterations, out.reached, diag.as_ref().map_err(Clone::clone));
    let summary_path = dir.join(format!("{prefix}_summary.json"));
    output::write_file(&summary_path, &output::summary_json(&summary))?;

    if !converged {
        return Err(CliError::NotConverged(format!(
            "solver did not converge ({status}); residual {:.3e}, partial results in {}",
            sol.residual.max_norm(),
            dir.display()
        )));
    }
    Ok(SolveArtifacts {
        trajectory,
        diagnostics,
        summary_path,
        summary,
    })
}

pub fn run_study(config_path: &Path) -> Result<(PathBuf, StudyReport), CliError> {
    let cfg = load(config_path)?;
    let study = cfg.study.clone().ok_or_else(|| CliError::Config("missing [study] section".into()))?;
    let dir = output_dir(&cfg, config_path)?;
    let schemes = cfg.study_schemes();
    let [a, b, g] = study.reference_scheme;
    let reference = SchemeParams::new(a, b, g, study.reference_n, cfg.horizon())?;
    let base = cfg.problem()?;
    let solver = cfg.solver_config();
    let formulation = cfg.formulation();
    let exec = if study.parallel { Execution::Parallel } else { Execution::Sequential };

    let solve = |p: &SchemeParams| -> Result<DiscreteTrajectory, String> {
        info!("study solve a={} b={} g={} N={}", p.alpha, p.beta, p.gamma, p.n_steps);
        let out = solve_once(&cfg, &base, p, formulation, &solver).map_err(|e| e.to_string())?;
        if out.solution.converged() && out.reached.is_none_or(|s| s == 1.0) {
            Ok(out.solution.trajectory)
        } else {
            Err(out.solution.stats.status.describe())
        }
    };
    let path = dir.join(format!("{}_study.csv", cfg.output.prefix));
    match convergence_study(&schemes, &study.n_list, &reference, exec, solve) {
        Ok(report) => {
            output::write_file(&path, &output::study_csv(&report))?;
            Ok((path, report))
        }
        Err(StudyError::Setup(m)) => Err(CliError::Config(m)),
        Err(e @ StudyError::Solve { .. }) => {
            if let StudyError::Solve { partial, .. } = &e {
                output::write_file(&path, &output::study_csv(partial))?;
            }
            Err(CliError::NotConverged(format!("{e}; partial table in {}", path.display())))
        }
    }
}

/// Outcome of the derivative checks.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub probes: usize,
    pub model_error: f64,
    pub terminal_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        // NaN fails
        self.model_error <= self.tolerance && self.terminal_error <= self.tolerance
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} probes: model derivatives {:.3e}, terminal gradients {:.3e} (tolerance {:.0e})",
            self.probes, self.model_error, self.terminal_error, self.tolerance
        )
    }
}

const CHECK_PROBES: usize = 100;

pub fn run_check(config_path: &Path) -> Result<CheckReport, CliError> {
    let cfg = load(config_path)?;
    let prob = cfg.problem()?;
    let n = prob.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let probes: Vec<(Vector, Vector)> = (0..CHECK_PROBES)
        .map(|_| {
            let q = match cfg.model {
                // keep clear of the singularity at the origin
                ModelConfig::Kepler(_) => {
                    let r = rng.random_range(0.5..8.0);
                    let th: f64 = rng.random_range(-3.2..3.2);
                    Vector::from_vec(vec![r * th.cos(), r * th.sin()])
                }
                ModelConfig::Linear(_) => Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0)),
            };
            let v = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            (q, v)
        })
        .collect();
    let model = check_derivatives(prob.system.as_ref(), &probes);
    let report = CheckReport {
        probes: probes.len(),
        model_error: match model.max_error() {
            e if !model.passed() && e <= model.tolerance => f64::NAN,
            e => e,
        },
        terminal_error: check_terminal_gradients(prob.terminal.as_ref(), &probes),
        tolerance: DERIVATIVE_TOLERANCE,
    };
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::CheckFailed(report.to_string()))
    }
}
