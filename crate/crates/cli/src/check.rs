//! `solver check`: quick invariant checks against independent references.

use fpk_core::evaluate::{analytic_reference, density_mass, normalize_potential};
use fpk_core::grid::{CollocationSet, Domain, PointSet};
use fpk_core::residual::eta_residual_terms;
use fpk_core::transport::{cost_matrix, resample, solve_transport, CostMode, ErrorEnsemble};
use fpk_core::{BoundaryMode, DynamicalSystem, PotentialNetwork, ResidualProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliResult;

pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome {
        name,
        passed,
        detail,
    }
}

fn analytic_residuals() -> Outcome {
    let sigma = 0.1f64.sqrt();
    let mut worst = 0.0f64;
    for (name, lo, hi) in [("vdp_rayleigh", -2.0, 2.0), ("ou1d", -3.0, 3.0)] {
        let sys = DynamicalSystem::make_builtin(name, sigma).expect("builtin");
        let r = analytic_reference(name, sigma).expect("reference");
        let d = Domain::cube(sys.dim(), lo, hi).expect("domain");
        let grid = CollocationSet::uniform_grid(&d, &vec![0.05; sys.dim()]).expect("grid");
        for x in grid.interior.iter() {
            let (f, div) = sys.eval_drift_and_divergence(x).expect("drift");
            worst = worst.max(eta_residual_terms(&f, div, sys.diffusion(), &r.jet(x)).abs());
        }
    }
    outcome(
        "analytic potentials zero the residual",
        worst < 1e-8,
        format!("max |R| = {worst:.2e}"),
    )
}

fn gradient() -> Outcome {
    let sys = DynamicalSystem::make_builtin("vdp", 0.5).expect("builtin");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let coords: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let bcoords: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let problem = ResidualProblem::from_points(
        &sys,
        PointSet::from_flat(2, coords).expect("points"),
        PointSet::from_flat(2, bcoords).expect("points"),
        BoundaryMode::ExpZero,
    )
    .expect("problem");
    let net = PotentialNetwork::init(2, 6, 3).expect("net");
    let (_, grad) = problem.loss_and_gradient(&net).expect("gradient");
    let mut worst = 0.0f64;
    for k in 0..net.num_params() {
        let h = 1e-6 * net.params()[k].abs().max(1.0);
        let mut p = net.params().to_vec();
        p[k] += h;
        let up = problem
            .loss(&PotentialNetwork::from_params(2, 6, p.clone(), 3).unwrap())
            .unwrap();
        p[k] -= 2.0 * h;
        let dn = problem
            .loss(&PotentialNetwork::from_params(2, 6, p, 3).unwrap())
            .unwrap();
        let fd = (up.total - dn.total) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3));
    }
    outcome(
        "loss gradient matches central differences",
        worst < 1e-6,
        format!("max rel err = {worst:.2e}"),
    )
}

fn transport() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = 60;
    let coords: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let res: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let e = ErrorEnsemble::new(PointSet::from_flat(2, coords).unwrap(), &res).unwrap();
    let cost = cost_matrix(e.points(), CostMode::Euclidean);
    let plan = match solve_transport(&e, &cost) {
        Ok(p) => p,
        Err(err) => {
            return outcome(
                "transport plan is optimal and feasible",
                false,
                err.to_string(),
            )
        }
    };
    let marg = plan.marginal_error(e.weights());
    let (u, v) = plan.duals.clone().unwrap_or_default();
    let mut min_rc = f64::INFINITY;
    for i in 0..m {
        for j in 0..m {
            min_rc = min_rc.min(cost[i * m + j] - u[i] - v[j]);
        }
    }
    let out = resample(&e, &plan);
    let mut hull = true;
    for d in 0..2 {
        let lo = e
            .points()
            .iter()
            .map(|p| p[d])
            .fold(f64::INFINITY, f64::min);
        let hi = e
            .points()
            .iter()
            .map(|p| p[d])
            .fold(f64::NEG_INFINITY, f64::max);
        hull &= out.iter().all(|p| p[d] >= lo - 1e-12 && p[d] <= hi + 1e-12);
    }
    outcome(
        "transport plan is optimal and feasible",
        marg < 1e-9 && min_rc >= -1e-9 && hull,
        format!("marginal err {marg:.1e}, min reduced cost {min_rc:.1e}, hull {hull}"),
    )
}

fn grids() -> Outcome {
    let counts: Vec<usize> = [(2.0, 0.25), (2.0, 0.05), (4.0, 0.1), (4.0, 0.05)]
        .iter()
        .map(|&(half, dx)| {
            let d = Domain::cube(2, -half, half).unwrap();
            CollocationSet::uniform_grid(&d, &[dx, dx]).map_or(0, |g| g.interior.len())
        })
        .collect();
    outcome(
        "grid interior counts",
        counts == [225, 6241, 6241, 25281],
        format!("{counts:?}"),
    )
}

fn normalization() -> Outcome {
    let d = Domain::cube(1, -10.0, 10.0).unwrap();
    let eta = |x: &[f64]| 0.5 * x[0] * x[0];
    let n0 = normalize_potential(eta, &d, &[0.01]).unwrap_or(f64::NAN);
    let mass = density_mass(eta, n0, &d, &[0.01]).unwrap_or(f64::NAN);
    let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    outcome(
        "normalization of a Gaussian",
        (n0 - exact).abs() < 1e-4 && (mass - 1.0).abs() < 1e-12,
        format!("N0 = {n0:.8}, mass = {mass:.15}"),
    )
}

pub fn run_all() -> Vec<Outcome> {
    vec![
        analytic_residuals(),
        gradient(),
        transport(),
        grids(),
        normalization(),
    ]
}

pub fn execute() -> CliResult {
    let results = run_all();
    for r in &results {
        println!(
            "[{}] {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(format!("{failed} check(s) failed").into());
    }
    Ok(())
}
