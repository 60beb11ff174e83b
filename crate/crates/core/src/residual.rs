//! Stationary Fokker–Planck residual in potential form and the training loss.
//!
//! With `ρ = exp(−η)`, `g = ∇η` and `Hm = ∇²η`, the stationary operator
//! `Σ_i ∂_i(F_i ρ) − Σ_ij D_ij ∂_ij ρ` factors as `exp(−η) · R(x)` where
//!
//! ```text
//! R(x) = Σ_i (∂F_i/∂x_i − F_i g_i) + Σ_ij D_ij (Hm_ij − g_i g_j)
//! ```
//!
//! `R` is the quantity penalized during training.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicalSystem, ExprError};
use crate::grid::{CollocationSet, PointSet};
use crate::io::{coord_header, write_numeric_csv, CsvError};
use crate::network::{JetCotangent, JetWorkspace, NetworkJet, PotentialNetwork};
use crate::par::{self, Reduction};

#[derive(Debug, Error)]
pub enum ResidualError {
    #[error("dimension mismatch: system has n = {system}, got {got}")]
    DimensionMismatch { system: usize, got: usize },
    #[error("interior collocation set is empty")]
    EmptyInterior,
    #[error("potential {0} is below -700; exp(-eta) would overflow")]
    Range(f64),
    #[error("drift evaluation failed at point {index}: {source}")]
    Drift {
        index: usize,
        #[source]
        source: ExprError,
    },
}

/// How the box boundary enters the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BoundaryMode {
    /// `mean exp(−η)²` over boundary nodes (unnormalized density driven to zero).
    ExpZero,
    /// `mean (η − eta_max)²` over boundary nodes.
    EtaTarget { eta_max: f64 },
    /// No boundary term.
    None,
}

impl Default for BoundaryMode {
    fn default() -> Self {
        BoundaryMode::ExpZero
    }
}

/// `R(x)` from precomputed drift terms.
pub fn eta_residual_terms(f: &[f64], div_f: f64, d: &DMatrix<f64>, jet: &NetworkJet) -> f64 {
    let n = f.len();
    let g = &jet.grad;
    let mut r = div_f;
    for i in 0..n {
        r -= f[i] * g[i];
        for j in 0..n {
            let dij = d[(i, j)];
            if dij != 0.0 {
                r += dij * (jet.hess[i * n + j] - g[i] * g[j]);
            }
        }
    }
    r
}

pub fn eta_residual(
    system: &DynamicalSystem,
    jet: &NetworkJet,
    x: &[f64],
) -> Result<f64, ResidualError> {
    check_dims(system, jet, x)?;
    let (f, div) = system
        .eval_drift_and_divergence(x)
        .map_err(|source| ResidualError::Drift { index: 0, source })?;
    Ok(eta_residual_terms(&f, div, system.diffusion(), jet))
}

/// The density-form operator evaluated at `ρ = exp(−η)` via the chain-rule identities
/// `∂_i ρ = −ρ g_i` and `∂_ij ρ = ρ (g_i g_j − Hm_ij)`.
pub fn rho_residual(
    system: &DynamicalSystem,
    jet: &NetworkJet,
    x: &[f64],
) -> Result<f64, ResidualError> {
    check_dims(system, jet, x)?;
    let (f, div) = system
        .eval_drift_and_divergence(x)
        .map_err(|source| ResidualError::Drift { index: 0, source })?;
    rho_residual_terms(&f, div, system.diffusion(), jet)
}

pub fn rho_residual_terms(
    f: &[f64],
    div_f: f64,
    d: &DMatrix<f64>,
    jet: &NetworkJet,
) -> Result<f64, ResidualError> {
    if jet.value < -700.0 {
        return Err(ResidualError::Range(jet.value));
    }
    let n = f.len();
    let rho = (-jet.value).exp();
    let mut out = rho * div_f;
    for i in 0..n {
        out += f[i] * (-rho * jet.grad[i]);
        for j in 0..n {
            let d2 = rho * (jet.grad[i] * jet.grad[j] - jet.hess[i * n + j]);
            out -= d[(i, j)] * d2;
        }
    }
    Ok(out)
}

fn check_dims(system: &DynamicalSystem, jet: &NetworkJet, x: &[f64]) -> Result<(), ResidualError> {
    let n = system.dim();
    for got in [x.len(), jet.grad.len()] {
        if got != n {
            return Err(ResidualError::DimensionMismatch { system: n, got });
        }
    }
    Ok(())
}

/// Loss value split into its parts plus the interior residuals (interior order).
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_r: f64,
    pub l_b: f64,
    pub total: f64,
    pub residuals: Vec<f64>,
}

/// A residual problem with drift values cached at every collocation point.
#[derive(Debug, Clone)]
pub struct ResidualProblem {
    n: usize,
    interior: PointSet,
    boundary: PointSet,
    drift: Vec<f64>,
    divergence: Vec<f64>,
    diffusion: DMatrix<f64>,
    boundary_mode: BoundaryMode,
    reduction: Reduction,
}

impl ResidualProblem {
    pub fn new(
        system: &DynamicalSystem,
        points: &CollocationSet,
        boundary_mode: BoundaryMode,
    ) -> Result<Self, ResidualError> {
        Self::from_points(
            system,
            points.interior.clone(),
            points.boundary.clone(),
            boundary_mode,
        )
    }

    pub fn from_points(
        system: &DynamicalSystem,
        interior: PointSet,
        boundary: PointSet,
        boundary_mode: BoundaryMode,
    ) -> Result<Self, ResidualError> {
        let n = system.dim();
        for set in [&interior, &boundary] {
            if !set.is_empty() && set.dim() != n {
                return Err(ResidualError::DimensionMismatch {
                    system: n,
                    got: set.dim(),
                });
            }
        }
        if interior.is_empty() {
            return Err(ResidualError::EmptyInterior);
        }
        let mut drift = Vec::with_capacity(interior.len() * n);
        let mut divergence = Vec::with_capacity(interior.len());
        for (index, x) in interior.iter().enumerate() {
            let (f, div) = system
                .eval_drift_and_divergence(x)
                .map_err(|source| ResidualError::Drift { index, source })?;
            drift.extend_from_slice(&f);
            divergence.push(div);
        }
        let boundary = if matches!(boundary_mode, BoundaryMode::None) {
            PointSet::new(n)
        } else {
            boundary
        };
        Ok(Self {
            n,
            interior,
            boundary,
            drift,
            divergence,
            diffusion: system.diffusion().clone(),
            boundary_mode,
            reduction: Reduction::Ordered,
        })
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn interior(&self) -> &PointSet {
        &self.interior
    }

    pub fn boundary(&self) -> &PointSet {
        &self.boundary
    }

    fn check_net(&self, net: &PotentialNetwork) -> Result<(), ResidualError> {
        if net.dim() != self.n {
            return Err(ResidualError::DimensionMismatch {
                system: self.n,
                got: net.dim(),
            });
        }
        Ok(())
    }

    /// Interior residuals `R(x_j)` in interior order.
    pub fn residuals(&self, net: &PotentialNetwork) -> Result<Vec<f64>, ResidualError> {
        self.check_net(net)?;
        let n = self.n;
        Ok(par::map(self.interior.len(), |j| {
            let jet = net.evaluate_jet(self.interior.get(j));
            eta_residual_terms(
                &self.drift[j * n..(j + 1) * n],
                self.divergence[j],
                &self.diffusion,
                &jet,
            )
        }))
    }

    /// Density-form residuals at the interior points.
    pub fn rho_residuals(&self, net: &PotentialNetwork) -> Result<Vec<f64>, ResidualError> {
        self.check_net(net)?;
        let n = self.n;
        par::map(self.interior.len(), |j| {
            let jet = net.evaluate_jet(self.interior.get(j));
            rho_residual_terms(
                &self.drift[j * n..(j + 1) * n],
                self.divergence[j],
                &self.diffusion,
                &jet,
            )
        })
        .into_iter()
        .collect()
    }

    fn boundary_term(&self, eta: f64) -> (f64, f64) {
        // (penalty, d penalty / d eta)
        match self.boundary_mode {
            BoundaryMode::ExpZero => {
                let e = (-2.0 * eta).exp();
                (e, -2.0 * e)
            }
            BoundaryMode::EtaTarget { eta_max } => {
                let d = eta - eta_max;
                (d * d, 2.0 * d)
            }
            BoundaryMode::None => (0.0, 0.0),
        }
    }

    fn boundary_loss(&self, net: &PotentialNetwork) -> f64 {
        if self.boundary.is_empty() {
            return 0.0;
        }
        let sum = par::reduce(
            self.boundary.len(),
            self.reduction,
            || 0.0,
            |range, acc| {
                for b in range {
                    *acc += self.boundary_term(net.value(self.boundary.get(b))).0;
                }
            },
        );
        sum / self.boundary.len() as f64
    }

    pub fn loss(&self, net: &PotentialNetwork) -> Result<LossReport, ResidualError> {
        let residuals = self.residuals(net)?;
        let mut sq = 0.0;
        for chunk in residuals.chunks(256) {
            sq += chunk.iter().map(|r| r * r).sum::<f64>();
        }
        let l_r = sq / residuals.len() as f64;
        let l_b = self.boundary_loss(net);
        Ok(LossReport {
            l_r,
            l_b,
            total: l_r + l_b,
            residuals,
        })
    }

    /// Total loss and its exact gradient with respect to the flattened parameters.
    pub fn loss_and_gradient(
        &self,
        net: &PotentialNetwork,
    ) -> Result<(f64, Vec<f64>), ResidualError> {
        self.check_net(net)?;
        let n = self.n;
        let p = net.num_params();
        let n_r = self.interior.len() as f64;
        let d_flat: Vec<f64> = (0..n * n)
            .map(|ij| self.diffusion[(ij / n, ij % n)])
            .collect();

        let (sq, mut grad) = par::reduce(
            self.interior.len(),
            self.reduction,
            || (0.0, vec![0.0; p]),
            |range, (sq, grad)| {
                let mut ws = JetWorkspace::new(net);
                let mut cot_g = vec![0.0; n];
                for j in range {
                    let x = self.interior.get(j);
                    net.jet_into(x, &mut ws);
                    let f = &self.drift[j * n..(j + 1) * n];
                    let r = eta_residual_terms(f, self.divergence[j], &self.diffusion, &ws.jet);
                    *sq += r * r;
                    // ∂R/∂g = −F − 2 D g, ∂R/∂Hm = D
                    for i in 0..n {
                        let mut dg = 0.0;
                        for k in 0..n {
                            dg += d_flat[i * n + k] * ws.jet.grad[k];
                        }
                        cot_g[i] = -f[i] - 2.0 * dg;
                    }
                    let cot = JetCotangent {
                        value: 0.0,
                        grad: &cot_g,
                        hess: &d_flat,
                    };
                    net.accumulate_vjp(x, &mut ws, cot, 2.0 * r / n_r, grad);
                }
            },
        );
        let mut total = sq / n_r;

        if !self.boundary.is_empty() {
            let n_b = self.boundary.len() as f64;
            let zeros_g = vec![0.0; n];
            let zeros_h = vec![0.0; n * n];
            let (pen, bgrad) = par::reduce(
                self.boundary.len(),
                self.reduction,
                || (0.0, vec![0.0; p]),
                |range, (pen, bgrad)| {
                    let mut ws = JetWorkspace::new(net);
                    for b in range {
                        let x = self.boundary.get(b);
                        net.jet_into(x, &mut ws);
                        let (v, dv) = self.boundary_term(ws.jet.value);
                        *pen += v;
                        let cot = JetCotangent {
                            value: dv,
                            grad: &zeros_g,
                            hess: &zeros_h,
                        };
                        net.accumulate_vjp(x, &mut ws, cot, 1.0 / n_b, bgrad);
                    }
                },
            );
            total += pen / n_b;
            for (g, b) in grad.iter_mut().zip(bgrad) {
                *g += b;
            }
        }
        Ok((total, grad))
    }

    /// CSV rows `x1..xn,R,R2` for the interior points.
    pub fn write_residual_csv<W: Write>(&self, out: W, residuals: &[f64]) -> Result<(), CsvError> {
        let header = coord_header(self.n, &["R", "R2"]);
        let rows = self.interior.iter().zip(residuals).map(|(x, &r)| {
            let mut row = x.to_vec();
            row.push(r);
            row.push(r * r);
            row
        });
        write_numeric_csv(out, &header, rows)
    }
}

/// Convenience wrapper: loss over a collocation set.
pub fn loss(
    net: &PotentialNetwork,
    system: &DynamicalSystem,
    points: &CollocationSet,
    boundary_mode: BoundaryMode,
) -> Result<LossReport, ResidualError> {
    ResidualProblem::new(system, points, boundary_mode)?.loss(net)
}

pub fn loss_gradient(
    net: &PotentialNetwork,
    system: &DynamicalSystem,
    points: &CollocationSet,
    boundary_mode: BoundaryMode,
) -> Result<Vec<f64>, ResidualError> {
    Ok(ResidualProblem::new(system, points, boundary_mode)?
        .loss_and_gradient(net)?
        .1)
}
