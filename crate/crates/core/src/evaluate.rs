//! Normalization, error metrics and closed-form reference densities.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Builtin, DynamicalSystem};
use crate::grid::{Domain, GridError, PointSet};
use crate::io::{coord_header, write_numeric_csv, CsvError};
use crate::network::{NetworkJet, PotentialNetwork};
use crate::par;
use crate::residual::{BoundaryMode, ResidualError, ResidualProblem};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error("quadrature of exp(-eta) is {0}; cannot normalize")]
    Quadrature(f64),
    #[error("no closed-form stationary density for system `{0}`")]
    NoReference(String),
    #[error("evaluation set is empty")]
    Empty,
}

/// Which operator the residual metric is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsForm {
    #[default]
    Eta,
    Rho,
}

/// All nodes of the inclusive tensor grid (first axis outermost) and their
/// composite-trapezoid weights.
pub fn quadrature_nodes(domain: &Domain, dx: &[f64]) -> Result<(PointSet, Vec<f64>), EvalError> {
    let nodes = domain.nodes_per_axis(dx)?;
    let n = domain.dim();
    let axis = |a: usize, i: usize| {
        let (lo, hi, k) = (domain.lower()[a], domain.upper()[a], nodes[a]);
        if i == k - 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (k - 1) as f64
        }
    };
    let total: usize = nodes.iter().product();
    let mut coords = Vec::with_capacity(total * n);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let mut w = 1.0;
        for a in 0..n {
            coords.push(axis(a, idx[a]));
            let h = (domain.upper()[a] - domain.lower()[a]) / (nodes[a] - 1) as f64;
            w *= if idx[a] == 0 || idx[a] == nodes[a] - 1 {
                0.5 * h
            } else {
                h
            };
        }
        weights.push(w);
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] < nodes[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok((PointSet::from_flat(n, coords)?, weights))
}

/// `N0 = 1 / ∫ exp(−η)` by the trapezoid rule, with the minimum of η factored out.
pub fn normalize_potential<F>(eta: F, domain: &Domain, dx: &[f64]) -> Result<f64, EvalError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let (nodes, weights) = quadrature_nodes(domain, dx)?;
    let values = par::map(nodes.len(), |i| eta(nodes.get(i)));
    let shift = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return Err(EvalError::Quadrature(f64::NAN));
    }
    let scaled: f64 = values
        .iter()
        .zip(&weights)
        .map(|(v, w)| w * (shift - v).exp())
        .sum();
    if !(scaled > 0.0 && scaled.is_finite()) {
        return Err(EvalError::Quadrature(scaled));
    }
    let n0 = shift.exp() / scaled;
    if !(n0 > 0.0 && n0.is_finite()) {
        return Err(EvalError::Quadrature(scaled * (-shift).exp()));
    }
    Ok(n0)
}

pub fn normalize(net: &PotentialNetwork, domain: &Domain, dx: &[f64]) -> Result<f64, EvalError> {
    normalize_potential(|x| net.value(x), domain, dx)
}

/// Trapezoid quadrature of `n0·exp(−η)`; 1 for a correctly normalized field.
pub fn density_mass<F>(eta: F, n0: f64, domain: &Domain, dx: &[f64]) -> Result<f64, EvalError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let (nodes, weights) = quadrature_nodes(domain, dx)?;
    let values = par::map(nodes.len(), |i| n0 * (-eta(nodes.get(i))).exp());
    Ok(values.iter().zip(&weights).map(|(v, w)| v * w).sum())
}

/// Closed-form stationary potentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticReference {
    /// `η = −(r² − r⁴/2)/σ²`, `r² = x1² + x2²`.
    VdpRayleigh { sigma: f64 },
    /// `η = x²/σ²`.
    Ou1d { sigma: f64 },
}

impl AnalyticReference {
    pub fn eta(&self, x: &[f64]) -> f64 {
        match *self {
            AnalyticReference::VdpRayleigh { sigma } => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                -(r2 - 0.5 * r2 * r2) / (sigma * sigma)
            }
            AnalyticReference::Ou1d { sigma } => x[0] * x[0] / (sigma * sigma),
        }
    }

    /// Closed-form value, gradient and Hessian of η.
    pub fn jet(&self, x: &[f64]) -> NetworkJet {
        match *self {
            AnalyticReference::VdpRayleigh { sigma } => {
                let s2 = sigma * sigma;
                let r2 = x[0] * x[0] + x[1] * x[1];
                let grad = vec![-2.0 * x[0] * (1.0 - r2) / s2, -2.0 * x[1] * (1.0 - r2) / s2];
                let mut hess = vec![0.0; 4];
                for i in 0..2 {
                    for j in 0..2 {
                        let delta = if i == j { 1.0 - r2 } else { 0.0 };
                        hess[i * 2 + j] = -2.0 * (delta - 2.0 * x[i] * x[j]) / s2;
                    }
                }
                NetworkJet {
                    value: self.eta(x),
                    grad,
                    hess,
                }
            }
            AnalyticReference::Ou1d { sigma } => {
                let s2 = sigma * sigma;
                NetworkJet {
                    value: self.eta(x),
                    grad: vec![2.0 * x[0] / s2],
                    hess: vec![2.0 / s2],
                }
            }
        }
    }

    /// Unnormalized density `exp(−η)`.
    pub fn density(&self, x: &[f64]) -> f64 {
        (-self.eta(x)).exp()
    }

    pub fn dim(&self) -> usize {
        match self {
            AnalyticReference::VdpRayleigh { .. } => 2,
            AnalyticReference::Ou1d { .. } => 1,
        }
    }
}

pub fn analytic_reference(name: &str, sigma: f64) -> Result<AnalyticReference, EvalError> {
    match Builtin::from_name(name) {
        Ok(Builtin::VdpRayleigh) => Ok(AnalyticReference::VdpRayleigh { sigma }),
        Ok(Builtin::Ou1d) => Ok(AnalyticReference::Ou1d { sigma }),
        _ => Err(EvalError::NoReference(name.to_string())),
    }
}

/// Mean squared residual over `interior` in the requested form.
pub fn eps_pde(
    net: &PotentialNetwork,
    system: &DynamicalSystem,
    interior: &PointSet,
    form: EpsForm,
) -> Result<f64, EvalError> {
    if interior.is_empty() {
        return Err(EvalError::Empty);
    }
    let problem = ResidualProblem::from_points(
        system,
        interior.clone(),
        PointSet::new(system.dim()),
        BoundaryMode::None,
    )?;
    let r = match form {
        EpsForm::Eta => problem.residuals(net)?,
        EpsForm::Rho => problem.rho_residuals(net)?,
    };
    Ok(mean_square(&r))
}

pub fn mean_square(values: &[f64]) -> f64 {
    values.iter().map(|r| r * r).sum::<f64>() / values.len() as f64
}

/// `mean |ρ̂_θ − ρ_ref|²` where both densities carry their own normalization constants.
pub fn eps_rho<F, G>(
    eta_model: F,
    n0_model: f64,
    eta_ref: G,
    n0_ref: f64,
    interior: &PointSet,
) -> Result<f64, EvalError>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
    G: Fn(&[f64]) -> f64 + Sync + Send,
{
    if interior.is_empty() {
        return Err(EvalError::Empty);
    }
    let diffs = par::map(interior.len(), |i| {
        let x = interior.get(i);
        n0_model * (-eta_model(x)).exp() - n0_ref * (-eta_ref(x)).exp()
    });
    Ok(mean_square(&diffs))
}

/// The trained potential and normalized density on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    pub points: PointSet,
    pub eta: Vec<f64>,
    pub n0: f64,
    pub rho_hat: Vec<f64>,
}

impl SolutionField {
    pub fn on_grid(net: &PotentialNetwork, domain: &Domain, dx: &[f64]) -> Result<Self, EvalError> {
        let n0 = normalize(net, domain, dx)?;
        let (points, _) = quadrature_nodes(domain, dx)?;
        let eta = par::map(points.len(), |i| net.value(points.get(i)));
        let rho_hat = eta.iter().map(|e| n0 * (-e).exp()).collect();
        Ok(Self {
            points,
            eta,
            n0,
            rho_hat,
        })
    }

    /// `x1..xn,eta,rho_hat`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CsvError> {
        write_numeric_csv(
            out,
            &coord_header(self.points.dim(), &["eta", "rho_hat"]),
            self.points.iter().enumerate().map(|(i, x)| {
                let mut row = x.to_vec();
                row.push(self.eta[i]);
                row.push(self.rho_hat[i]);
                row
            }),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iteration: usize,
    pub form: EpsForm,
    /// ε_pde in `form`.
    pub eps_pde: f64,
    pub eps_pde_eta: f64,
    pub eps_pde_rho: f64,
    pub eps_rho: Option<f64>,
    #[serde(rename = "N0")]
    pub n0: f64,
    #[serde(rename = "N_U")]
    pub n_u: usize,
}

/// Computes every metric for one network on a test interior.
pub fn compute_metrics(
    net: &PotentialNetwork,
    system: &DynamicalSystem,
    test_interior: &PointSet,
    domain: &Domain,
    dx_quad: &[f64],
    form: EpsForm,
    reference: Option<&AnalyticReference>,
    iteration: usize,
) -> Result<Metrics, EvalError> {
    let eta_form = eps_pde(net, system, test_interior, EpsForm::Eta)?;
    let rho_form = eps_pde(net, system, test_interior, EpsForm::Rho)?;
    let n0 = normalize(net, domain, dx_quad)?;
    let eps_rho = match reference {
        Some(r) => {
            let n0_ref = normalize_potential(|x| r.eta(x), domain, dx_quad)?;
            Some(eps_rho(
                |x| net.value(x),
                n0,
                |x| r.eta(x),
                n0_ref,
                test_interior,
            )?)
        }
        None => None,
    };
    Ok(Metrics {
        iteration,
        form,
        eps_pde: match form {
            EpsForm::Eta => eta_form,
            EpsForm::Rho => rho_form,
        },
        eps_pde_eta: eta_form,
        eps_pde_rho: rho_form,
        eps_rho,
        n0,
        n_u: test_interior.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CollocationSet;
    use crate::network::DEFAULT_WIDTH;

    fn unit_box() -> Domain {
        Domain::cube(1, 0.0, 1.0).unwrap()
    }

    #[test]
    fn gaussian_normalizer() {
        let d = Domain::cube(1, -10.0, 10.0).unwrap();
        let n0 = normalize_potential(|x| 0.5 * x[0] * x[0], &d, &[0.01]).unwrap();
        let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((n0 - exact).abs() < 1e-4);
    }

    #[test]
    fn constant_potentials() {
        let n0 = normalize_potential(|_| 0.0, &unit_box(), &[0.1]).unwrap();
        assert!((n0 - 1.0).abs() < 1e-14);
        let n0 = normalize_potential(|_| 2f64.ln(), &unit_box(), &[0.1]).unwrap();
        assert!((n0 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn large_potentials_do_not_underflow() {
        let shifted = normalize_potential(|x| 80.0 + x[0], &unit_box(), &[0.05]).unwrap();
        let plain = normalize_potential(|x| x[0], &unit_box(), &[0.05]).unwrap();
        assert!((shifted / 80f64.exp() / plain - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_weights_sum_to_volume() {
        let d = Domain::new(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap();
        let (pts, w) = quadrature_nodes(&d, &[0.5, 0.25]).unwrap();
        assert_eq!(pts.len(), 5 * 13);
        assert!((w.iter().sum::<f64>() - 6.0).abs() < 1e-12);
        // first axis outermost, matching the collocation grid
        assert_eq!(pts.get(1), &[-1.0, 0.25]);
    }

    #[test]
    fn mass_is_one_after_normalizing() {
        let d = Domain::cube(2, -2.0, 2.0).unwrap();
        let r = analytic_reference("vdp_rayleigh", 0.1f64.sqrt()).unwrap();
        let n0 = normalize_potential(|x| r.eta(x), &d, &[0.05, 0.05]).unwrap();
        let mass = density_mass(|x| r.eta(x), n0, &d, &[0.05, 0.05]).unwrap();
        assert!((mass - 1.0).abs() < 1e-12);
        let fine = normalize_potential(|x| r.eta(x), &d, &[0.025, 0.025]).unwrap();
        assert!(((fine - n0) / n0).abs() < 1e-4);
    }

    #[test]
    fn references() {
        let r = analytic_reference("vdp_rayleigh", 0.3).unwrap();
        assert_eq!(r.density(&[0.0, 0.0]), 1.0);
        assert_eq!(r.density(&[1.0, 0.0]), r.density(&[0.0, 1.0]));
        let ou = analytic_reference("ou1d", 0.5).unwrap();
        assert!((ou.density(&[0.5]) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(
            analytic_reference("vdp", 0.3),
            Err(EvalError::NoReference(_))
        ));
    }

    #[test]
    fn reference_jets_match_differences() {
        let h = 1e-5;
        for (r, x) in [
            (
                analytic_reference("vdp_rayleigh", 0.4).unwrap(),
                vec![0.7, -0.3],
            ),
            (analytic_reference("ou1d", 0.6).unwrap(), vec![0.45]),
        ] {
            let jet = r.jet(&x);
            let n = x.len();
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (r.eta(&xp) - r.eta(&xm)) / (2.0 * h);
                assert!((fd - jet.grad[i]).abs() < 1e-6 * fd.abs().max(1.0));
                let (gp, gm) = (r.jet(&xp).grad, r.jet(&xm).grad);
                for j in 0..n {
                    let fd = (gp[j] - gm[j]) / (2.0 * h);
                    assert!((fd - jet.hess[i * n + j]).abs() < 1e-6 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn reference_potentials_annihilate_the_residual() {
        for (name, lo, hi) in [("vdp_rayleigh", -2.0, 2.0), ("ou1d", -3.0, 3.0)] {
            let sigma = 0.1f64.sqrt();
            let sys = DynamicalSystem::make_builtin(name, sigma).unwrap();
            let r = analytic_reference(name, sigma).unwrap();
            let d = Domain::cube(sys.dim(), lo, hi).unwrap();
            let grid = CollocationSet::uniform_grid(&d, &vec![0.05; sys.dim()]).unwrap();
            for x in grid.interior.iter() {
                let (f, div) = sys.eval_drift_and_divergence(x).unwrap();
                let res = crate::residual::eta_residual_terms(&f, div, sys.diffusion(), &r.jet(x));
                assert!(res.abs() < 1e-8, "{name} at {x:?}: {res}");
            }
        }
    }

    #[test]
    fn eps_rho_identities() {
        let pts = PointSet::from_rows(1, &[[0.1], [0.4], [0.9]]).unwrap();
        let f = |x: &[f64]| x[0] * x[0];
        assert_eq!(eps_rho(f, 1.3, f, 1.3, &pts).unwrap(), 0.0);
        // η ≡ 0 with N0 = a and b gives a constant offset
        let e = eps_rho(|_| 0.0, 1.5, |_| 0.0, 1.25, &pts).unwrap();
        assert!((e - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn eps_pde_of_a_single_point() {
        // a constant network has R = div F; for ou1d that is −1 everywhere
        let sys = DynamicalSystem::make_builtin("ou1d", 0.5).unwrap();
        let mut net = PotentialNetwork::init(1, DEFAULT_WIDTH, 0).unwrap();
        let zeros = vec![0.0; net.num_params()];
        net.set_params(&zeros).unwrap();
        let pts = PointSet::from_rows(1, &[[0.3]]).unwrap();
        assert_eq!(eps_pde(&net, &sys, &pts, EpsForm::Eta).unwrap(), 1.0);
        // three points with R = −1 + a constant shift in the ρ form: exp(−0)·R
        let pts = PointSet::from_rows(1, &[[0.3], [-0.2], [0.0]]).unwrap();
        assert_eq!(eps_pde(&net, &sys, &pts, EpsForm::Rho).unwrap(), 1.0);
        assert!(matches!(
            eps_pde(&net, &sys, &PointSet::new(1), EpsForm::Eta),
            Err(EvalError::Empty)
        ));
    }

    #[test]
    fn rho_form_bounded_by_eta_form() {
        let sys = DynamicalSystem::make_builtin("vdp_rayleigh", 0.1f64.sqrt()).unwrap();
        let net = PotentialNetwork::init(2, DEFAULT_WIDTH, 7).unwrap();
        let d = Domain::cube(2, -2.0, 2.0).unwrap();
        let grid = CollocationSet::uniform_grid(&d, &[0.1, 0.1]).unwrap();
        let eta = eps_pde(&net, &sys, &grid.interior, EpsForm::Eta).unwrap();
        let rho = eps_pde(&net, &sys, &grid.interior, EpsForm::Rho).unwrap();
        let max_w = grid
            .interior
            .iter()
            .map(|x| (-2.0 * net.value(x)).exp())
            .fold(0.0, f64::max);
        assert!(rho <= eta * max_w * (1.0 + 1e-12));
    }

    #[test]
    fn metrics_json_shape() {
        let sys = DynamicalSystem::make_builtin("ou1d", 0.5).unwrap();
        let net = PotentialNetwork::init(1, 8, 1).unwrap();
        let d = Domain::cube(1, -2.0, 2.0).unwrap();
        let grid = CollocationSet::uniform_grid(&d, &[0.1]).unwrap();
        let r = analytic_reference("ou1d", 0.5).unwrap();
        let m = compute_metrics(
            &net,
            &sys,
            &grid.interior,
            &d,
            &[0.1],
            EpsForm::Eta,
            Some(&r),
            0,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        for key in ["eps_pde", "eps_rho", "N0", "N_U", "form", "iteration"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["N_U"], 39);
        assert_eq!(v["form"], "eta");
    }

    #[test]
    fn solution_csv_header() {
        let net = PotentialNetwork::init(1, 4, 1).unwrap();
        let d = Domain::cube(1, 0.0, 1.0).unwrap();
        let field = SolutionField::on_grid(&net, &d, &[0.25]).unwrap();
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,eta,rho_hat\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
