//! Optimal transport from a uniform ensemble onto an error-weighted one.
//!
//! Given `M` points with squared residuals, the target weights are `w_i = R_i²/ΣR²`.
//! The plan `T` solves `min Σ t_ij c_ij` with row sums `w` and column sums `1/M`;
//! the resampled ensemble is `x_j⁺ = Σ_i x_i t_ij / Σ_i t_ij`.

mod simplex;
mod sinkhorn;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::PointSet;
use crate::io::{coord_header, fmt_f64, write_numeric_csv, CsvError};

pub use simplex::SimplexError;

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("ensemble is empty")]
    Empty,
    #[error("{points} points but {residuals} residuals")]
    LengthMismatch { points: usize, residuals: usize },
    #[error("residual {index} is not finite ({value})")]
    NonFiniteResidual { index: usize, value: f64 },
    #[error("cost matrix is {rows}x{cols}, expected {m}x{m}")]
    CostShape { rows: usize, cols: usize, m: usize },
    #[error("cost entry ({i}, {j}) = {value} is negative or not finite")]
    BadCost { i: usize, j: usize, value: f64 },
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("transportation simplex stopped after {0} pivots")]
    PivotLimit(usize),
}

/// Source points with their normalized squared-residual weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEnsemble {
    points: PointSet,
    sq_residuals: Vec<f64>,
    weights: Vec<f64>,
}

impl ErrorEnsemble {
    /// Falls back to uniform weights when every squared residual is equal (including all zero).
    pub fn new(points: PointSet, residuals: &[f64]) -> Result<Self, TransportError> {
        if points.is_empty() {
            return Err(TransportError::Empty);
        }
        if points.len() != residuals.len() {
            return Err(TransportError::LengthMismatch {
                points: points.len(),
                residuals: residuals.len(),
            });
        }
        if let Some((index, &value)) = residuals.iter().enumerate().find(|(_, r)| !r.is_finite()) {
            return Err(TransportError::NonFiniteResidual { index, value });
        }
        let sq: Vec<f64> = residuals.iter().map(|r| r * r).collect();
        let total: f64 = sq.iter().sum();
        let m = sq.len();
        let uniform = sq.iter().all(|&s| s == sq[0]);
        let weights = if total > 0.0 && total.is_finite() && !uniform {
            sq.iter().map(|s| s / total).collect()
        } else {
            vec![1.0 / m as f64; m]
        };
        Ok(Self {
            points,
            sq_residuals: sq,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn sq_residuals(&self) -> &[f64] {
        &self.sq_residuals
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    #[default]
    Euclidean,
    SqEuclidean,
}

/// Pairwise distances, row-major `M×M`.
pub fn cost_matrix(points: &PointSet, mode: CostMode) -> Vec<f64> {
    let m = points.len();
    let mut cost = vec![0.0; m * m];
    cost.par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let xi = points.get(i);
            for (j, c) in row.iter_mut().enumerate() {
                let sq: f64 = xi
                    .iter()
                    .zip(points.get(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                *c = match mode {
                    CostMode::Euclidean => sq.sqrt(),
                    CostMode::SqEuclidean => sq,
                };
            }
        });
    cost
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Exact,
    Sinkhorn,
}

#[derive(Debug, Clone)]
pub struct TransportPlan {
    m: usize,
    /// Row-major `M×M`.
    plan: Vec<f64>,
    pub objective: f64,
    pub solver: Solver,
    /// Simplex pivots or Sinkhorn sweeps.
    pub iterations: usize,
    pub converged: bool,
    /// Row and column potentials (exact solver only).
    pub duals: Option<(Vec<f64>, Vec<f64>)>,
}

impl TransportPlan {
    pub fn size(&self) -> usize {
        self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.m + j]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.plan
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan
            .chunks_exact(self.m)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for row in self.plan.chunks_exact(self.m) {
            for (o, t) in out.iter_mut().zip(row) {
                *o += t;
            }
        }
        out
    }

    /// Largest deviation from the `(w, 1/M)` marginals.
    pub fn marginal_error(&self, weights: &[f64]) -> f64 {
        let target = 1.0 / self.m as f64;
        let rows = self
            .row_sums()
            .iter()
            .zip(weights)
            .map(|(r, w)| (r - w).abs())
            .fold(0.0, f64::max);
        let cols = self
            .col_sums()
            .iter()
            .map(|c| (c - target).abs())
            .fold(0.0, f64::max);
        rows.max(cols)
    }

    /// Nonzero entries as `i,j,t` triplets.
    pub fn write_triplets_csv<W: Write>(&self, out: W) -> Result<(), CsvError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "t"])?;
        for (k, &t) in self.plan.iter().enumerate() {
            if t != 0.0 {
                let (i, j) = (k / self.m, k % self.m);
                w.write_record([i.to_string(), j.to_string(), fmt_f64(t)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_cost(m: usize, cost: &[f64]) -> Result<(), TransportError> {
    if cost.len() != m * m {
        return Err(TransportError::CostShape {
            rows: cost.len() / m.max(1),
            cols: m,
            m,
        });
    }
    if let Some(k) = cost.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(TransportError::BadCost {
            i: k / m,
            j: k % m,
            value: cost[k],
        });
    }
    Ok(())
}

fn objective(plan: &[f64], cost: &[f64]) -> f64 {
    plan.iter().zip(cost).map(|(t, c)| t * c).sum()
}

/// Exact optimum by the transportation simplex.
pub fn solve_transport(
    ensemble: &ErrorEnsemble,
    cost: &[f64],
) -> Result<TransportPlan, TransportError> {
    let m = ensemble.len();
    check_cost(m, cost)?;
    let demand = vec![1.0 / m as f64; m];
    let max_pivots = 50 * m * m + 1000;
    let sol =
        simplex::solve(ensemble.weights(), &demand, cost, max_pivots).map_err(|e| match e {
            SimplexError::PivotLimit(p) => TransportError::PivotLimit(p),
        })?;
    Ok(TransportPlan {
        m,
        objective: objective(&sol.flow, cost),
        plan: sol.flow,
        solver: Solver::Exact,
        iterations: sol.pivots,
        converged: true,
        duals: Some((sol.row_potential, sol.col_potential)),
    })
}

/// Median of the off-diagonal costs; a scale for the Sinkhorn regularization.
pub fn median_cost(cost: &[f64], m: usize) -> f64 {
    let mut off: Vec<f64> = (0..m * m)
        .filter(|k| k / m != k % m)
        .map(|k| cost[k])
        .collect();
    if off.is_empty() {
        return 1.0;
    }
    off.sort_by(f64::total_cmp);
    off[off.len() / 2]
}

/// Entropy-regularized plan. A plan is returned even if `marginal_tol` was not reached;
/// `converged` says which.
pub fn solve_transport_sinkhorn(
    ensemble: &ErrorEnsemble,
    cost: &[f64],
    epsilon: f64,
    max_sweeps: usize,
    marginal_tol: f64,
) -> Result<TransportPlan, TransportError> {
    let m = ensemble.len();
    check_cost(m, cost)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(TransportError::Epsilon(epsilon));
    }
    let demand = vec![1.0 / m as f64; m];
    let sol = sinkhorn::solve(
        ensemble.weights(),
        &demand,
        cost,
        epsilon,
        max_sweeps,
        marginal_tol,
    );
    Ok(TransportPlan {
        m,
        objective: objective(&sol.plan, cost),
        plan: sol.plan,
        solver: Solver::Sinkhorn,
        iterations: sol.sweeps,
        converged: sol.converged,
        duals: None,
    })
}

/// Barycentric images of the plan columns.
pub fn resample(ensemble: &ErrorEnsemble, plan: &TransportPlan) -> PointSet {
    let m = plan.size();
    let n = ensemble.points().dim();
    let mut flat = vec![0.0; m * n];
    for j in 0..m {
        let out = &mut flat[j * n..(j + 1) * n];
        let mut mass = 0.0;
        let mut sources = 0;
        let mut last = j;
        for i in 0..m {
            let t = plan.entry(i, j);
            if t > 0.0 {
                mass += t;
                sources += 1;
                last = i;
                for (o, x) in out.iter_mut().zip(ensemble.points().get(i)) {
                    *o += t * x;
                }
            }
        }
        // (x·t)/t is not always x in floating point
        if sources == 1 {
            out.copy_from_slice(ensemble.points().get(last));
        } else if mass > 0.0 {
            out.iter_mut().for_each(|o| *o /= mass);
        } else {
            out.copy_from_slice(ensemble.points().get(j));
        }
    }
    PointSet::from_flat(n, flat).expect("dimensions agree")
}

pub fn write_points_csv<W: Write>(points: &PointSet, out: W) -> Result<(), CsvError> {
    write_numeric_csv(
        out,
        &coord_header(points.dim(), &[]),
        points.iter().map(|p| p.to_vec()),
    )
}
