use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varoc::diagnostics::{convergence_study, diagnostics_series, AffineSymmetry, SchemeSpec};
use varoc::direct::{augmented_objective, kkt_residual_dir1, kkt_residual_dir2, map_new_to_dir1, map_new_to_dir2, objective_dir1, objective_dir2};
use varoc::exec::Execution;
use varoc::kepler::{kepler_system, KeplerParams};
use varoc::model::check_derivatives;
use varoc::residual::{assemble, Formulation};
use varoc::*;

const T: f64 = 28.0;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn record(out: &mut Vec<Outcome>, id: u32, pass: bool, detail: String) {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, pass, detail });
}

fn kepler() -> KeplerParams {
    KeplerParams::default()
}

fn solve(alpha: f64, gamma: f64, n: usize, f: Formulation) -> (Solution, Duration) {
    let p = SchemeParams::new(alpha, gamma, gamma, n, T).unwrap();
    let start = Instant::now();
    let c = kepler().solve(&p, f, &SolverConfig::default()).unwrap();
    (c.solution, start.elapsed())
}

fn free_system_exactness(out: &mut Vec<Outcome>) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for case in 0..60 {
        let n = 1 + case % 3;
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        let pick = |rng: &mut ChaCha8Rng| grid[rng.random_range(0..grid.len())];
        let (a, b, g) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        let nn = rng.random_range(2..12);
        let h = 2f64.powi(-rng.random_range(0..5));
        let dyadic = |rng: &mut ChaCha8Rng| rng.random_range(-16..16) as f64 / 8.0;
        let q0 = Vector::from_iterator(n, (0..n).map(|_| dyadic(&mut rng)));
        let v0 = Vector::from_iterator(n, (0..n).map(|_| dyadic(&mut rng)));
        let mut sys = LinearSystem::free_particle(n);
        sys.rho = Matrix::identity(n, 1);
        sys.g = Matrix::identity(1, 1);
        let prob = OcProblem::new(Arc::new(sys), Arc::new(ZeroTerminalCost { dim: n }), q0.clone(), v0.clone(), h * nn as f64).unwrap();
        let p = SchemeParams::with_step(a, b, g, h, h * nn as f64).unwrap();
        for dep in [false, true] {
            let traj = DiscreteTrajectory {
                q: (0..=nn).map(|k| &q0 + &v0 * (k as f64 * h)).collect(),
                lam: vec![Vector::zeros(n); nn + 1],
                u1: if dep { vec![Vector::zeros(1); nn] } else { vec![] },
                u2: if dep { vec![Vector::zeros(1); nn] } else { vec![] },
                mu: Vector::zeros(n),
                nu: Vector::zeros(n),
            };
            worst = worst.max(assemble(&prob, &p, &traj).unwrap().max_norm());
        }
    }
    let t = start.elapsed();
    record(out, 1, worst <= 1e-12 && t < Duration::from_secs(1), format!("free system residual {worst:.2e} over 120 cases in {t:.2?}"));
}

fn check_run(sol: &Solution, elapsed: Duration) -> (bool, String) {
    let r = sol.residual.max_norm();
    let ok = sol.converged() && r <= 1e-10 && sol.stats.iterations <= 200 && elapsed <= Duration::from_secs(60);
    (ok, format!("res {r:.2e}, {} its, {elapsed:.2?}", sol.stats.iterations))
}

fn main() {
    let mut out = Vec::new();
    free_system_exactness(&mut out);

    let sym = AffineSymmetry::rotation_2d();
    let prob = kepler().problem(T).unwrap();
    let tol = SolverConfig::default().tol;

    // transfer runs
    let mut runs = Vec::new();
    for (a, g) in [(1.0, 1.0), (0.5, 0.5)] {
        for f in [Formulation::Independent, Formulation::Dependent] {
            runs.push(((a, g, f), solve(a, g, 280, f)));
        }
    }
    let mut ok2 = true;
    let mut detail2 = Vec::new();
    let mut ok3 = true;
    let mut worst3: f64 = 0.0;
    for ((a, _, f), (sol, t)) in &runs {
        let (ok, d) = check_run(sol, *t);
        ok2 &= ok;
        detail2.push(format!("a={a} {}: {d}", f.name()));
        let diag = diagnostics_series(&prob, &sol.params, &sol.trajectory, Some(&sym)).unwrap();
        let rel = diag.max_noether_drift / (1.0 + diag.noether[0].abs());
        worst3 = worst3.max(rel);
        ok3 &= sol.converged() && rel <= 1e-8;
    }
    record(&mut out, 2, ok2, detail2.join("; "));
    record(&mut out, 3, ok3, format!("max relative rotation-integral drift {worst3:.2e}"));

    // formulation equivalence
    let mut ok4 = true;
    let mut worst4: f64 = 0.0;
    let mut all_runs: Vec<Solution> = runs.iter().map(|(_, (s, _))| s.clone()).collect();
    for (a, g) in [(1.0, 1.0), (1.0, 0.0), (0.5, 0.5), (0.5, 1.0)] {
        let (ind, _) = solve(a, g, 280, Formulation::Independent);
        let (dep, _) = solve(a, g, 280, Formulation::Dependent);
        let both = ind.residual.max_norm() <= 1e-10 && dep.residual.max_norm() <= 1e-10;
        let mut diff: f64 = 0.0;
        for k in 0..=280 {
            diff = diff.max((&ind.trajectory.q[k] - &dep.trajectory.q[k]).amax());
            diff = diff.max((&ind.trajectory.lam[k] - &dep.trajectory.lam[k]).amax());
        }
        worst4 = worst4.max(diff);
        ok4 &= both && diff <= 1e-6;
        all_runs.push(ind);
        all_runs.push(dep);
    }
    record(&mut out, 4, ok4, format!("max formulation difference {worst4:.2e} over 4 schemes"));

    // direct transcriptions
    let mut ok5 = true;
    let (mut kkt1, mut kkt2, mut ident): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for ((_, _, f), (sol, _)) in &runs {
        if *f != Formulation::Dependent {
            continue;
        }
        let p = &sol.params;
        let d1 = map_new_to_dir1(&sol.trajectory, &prob, p).unwrap();
        let d2 = map_new_to_dir2(&sol.trajectory).unwrap();
        kkt1 = kkt1.max(kkt_residual_dir1(&d1, &prob, p).unwrap().max_norm());
        kkt2 = kkt2.max(kkt_residual_dir2(&d2, &prob, p).unwrap().max_norm());
        let reference = augmented_objective(&prob, p, &sol.trajectory).unwrap();
        for j in [objective_dir1(&d1, &prob, p), objective_dir2(&d2, &prob, p)] {
            ident = ident.max((j - reference).abs() / reference.abs().max(f64::MIN_POSITIVE));
        }
        ok5 &= d1.v[0] == sol.v0_minus;
    }
    ok5 &= kkt1 <= 1e-8 && kkt2 <= 1e-8 && ident <= 1e-10;
    record(&mut out, 5, ok5, format!("KKT dir1 {kkt1:.2e}, dir2 {kkt2:.2e}, objective identity {ident:.2e}"));

    // convergence orders
    let start = Instant::now();
    let schemes = [
        SchemeSpec::new("euler", 1.0, 1.0, 1.0),
        SchemeSpec::new("euler-mixed", 1.0, 0.0, 0.0),
        SchemeSpec::new("midpoint", 0.5, 0.5, 0.5),
        SchemeSpec::new("trapezoidal", 0.5, 1.0, 1.0),
        SchemeSpec::new("midpoint-alpha1", 1.0, 0.5, 0.5),
    ];
    let reference = SchemeParams::new(0.5, 0.5, 0.5, 2800, T).unwrap();
    let study = convergence_study(&schemes, &[35, 70, 140, 280], &reference, Execution::Sequential, |p| {
        let c = kepler().solve(p, Formulation::Independent, &SolverConfig::default()).map_err(|e| e.to_string())?;
        if c.completed() {
            Ok(c.solution.trajectory)
        } else {
            Err(c.solution.stats.status.describe())
        }
    });
    let t6 = start.elapsed();
    match study {
        Ok(report) => {
            let mut ok6 = t6 <= Duration::from_secs(900);
            let mut parts = Vec::new();
            for s in &schemes {
                let slope = report.slope(&s.id).unwrap();
                let second = s.alpha == 0.5 || (s.beta == 0.5 && s.gamma == 0.5);
                let (lo, hi) = if second { (1.7, 2.3) } else { (0.7, 1.3) };
                ok6 &= (lo..=hi).contains(&slope);
                parts.push(format!("{} {slope:.3}", s.id));
            }
            print!("{}", report.to_csv());
            record(&mut out, 6, ok6, format!("slopes {} in {t6:.2?}", parts.join(", ")));
        }
        Err(e) => record(&mut out, 6, false, format!("study failed: {e}")),
    }

    // momentum matching
    let mut worst7: f64 = 0.0;
    for sol in all_runs.iter().filter(|s| s.converged()) {
        let d = diagnostics_series(&prob, &sol.params, &sol.trajectory, None).unwrap();
        worst7 = worst7.max(d.momentum_defect);
    }
    record(&mut out, 7, worst7 <= 100.0 * tol, format!("max interior momentum defect {worst7:.2e}"));

    // Hamiltonian drift
    let drift = |n: usize| {
        let (sol, _) = solve(0.5, 0.5, n, Formulation::Independent);
        assert!(sol.converged());
        diagnostics_series(&prob, &sol.params, &sol.trajectory, None).unwrap().max_h_tilde_drift
    };
    let (coarse, fine) = (drift(280), drift(560));
    let ratio = coarse / fine;
    record(&mut out, 8, ratio >= 1.5, format!("H drift {coarse:.3e} at h=0.1, {fine:.3e} at h=0.05, ratio {ratio:.2}"));

    // derivative hygiene
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let probes: Vec<(Vector, Vector)> = (0..100)
        .map(|_| {
            let r = rng.random_range(0.5..8.0);
            let th = rng.random_range(-3.2..3.2f64);
            let q = Vector::from_vec(vec![r * th.cos(), r * th.sin()]);
            let v = Vector::from_vec(vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            (q, v)
        })
        .collect();
    let report = check_derivatives(&kepler_system(1.0, 10.0).unwrap(), &probes);
    record(&mut out, 9, report.passed(), format!("max derivative error {:.2e} on 100 probes", report.max_error()));

    let failed: Vec<String> = out.iter().filter(|o| !o.pass).map(|o| format!("{}: {}", o.id, o.detail)).collect();
    println!("acceptance: {} of {} criteria passed", out.len() - failed.len(), out.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
