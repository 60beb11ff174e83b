//! Dense BFGS with a strong Wolfe line search.

mod line_search;

pub use line_search::{wolfe_line_search, Accepted, LineSearchError, Trial, WolfeParams};

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{fmt_f64, CsvError};

/// Something that returns `(value, gradient)` at a point.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64]) -> (f64, Vec<f64>);
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    fn evaluate(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Stop once `‖∇f‖_∞` falls to this value.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search_evals: usize,
    /// Upper bracketing bound for the step length.
    pub step_max: f64,
    /// Relative gap between an accepted unit-length trial and the secant estimate of
    /// the line minimizer above which one extra evaluation is spent on the estimate.
    pub refine_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            grad_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evals: 50,
            step_max: 1e6,
            refine_tol: 0.1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("objective is not finite at the starting point")]
    NonFiniteStart,
    #[error("invalid optimizer settings: {0}")]
    Settings(String),
    #[error("gradient has length {got}, expected {expected}")]
    GradientLength { expected: usize, got: usize },
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(OptimError::Settings(format!(
                "need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if self.max_iters == 0 {
            return Err(OptimError::Settings("max_iters must be >= 1".into()));
        }
        if self.max_line_search_evals == 0 {
            return Err(OptimError::Settings(
                "max_line_search_evals must be >= 1".into(),
            ));
        }
        if !(self.grad_tol >= 0.0) || !(self.step_max > 0.0) || !(self.refine_tol >= 0.0) {
            return Err(OptimError::Settings(
                "grad_tol and refine_tol must be >= 0, step_max > 0".into(),
            ));
        }
        Ok(())
    }

    fn wolfe(&self) -> WolfeParams {
        WolfeParams {
            c1: self.c1,
            c2: self.c2,
            max_evals: self.max_line_search_evals,
            step_max: self.step_max,
            refine_tol: self.refine_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub fevals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimTrace {
    /// Entry 0 is the starting point; each later entry is an accepted step.
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub skipped_updates: usize,
    /// Times the search direction failed `gᵀd < 0` and the estimate was reset.
    pub hessian_resets: usize,
}

impl OptimTrace {
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    /// CSV columns `iteration,loss,grad_norm,step,fevals`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CsvError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "loss", "grad_norm", "step", "fevals"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                fmt_f64(r.loss),
                fmt_f64(r.grad_norm),
                fmt_f64(r.step),
                r.fevals.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimizes `objective` from `x0`. Returns the best iterate and the trace.
///
/// Curvature pairs with `sᵀy ≤ 1e−10‖s‖‖y‖` are skipped. A failed line search ends the
/// run (recorded in the trace) unless a sufficient-decrease point was found, in which
/// case that point is taken and the inverse Hessian estimate restarts from the identity.
pub fn minimize<O: Objective>(
    objective: &mut O,
    x0: &[f64],
    settings: &OptimizerSettings,
) -> Result<(Vec<f64>, OptimTrace), OptimError> {
    settings.validate()?;
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut f, g) = objective.evaluate(x0);
    if g.len() != n {
        return Err(OptimError::GradientLength {
            expected: n,
            got: g.len(),
        });
    }
    let mut g = DVector::from_vec(g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(OptimError::NonFiniteStart);
    }
    let mut fevals = 1;
    let mut trace = OptimTrace {
        records: vec![IterationRecord {
            iteration: 0,
            loss: f,
            grad_norm: max_norm(&g),
            step: 0.0,
            fevals,
        }],
        termination: Termination::MaxIterations,
        skipped_updates: 0,
        hessian_resets: 0,
    };
    if max_norm(&g) <= settings.grad_tol {
        trace.termination = Termination::GradientTolerance;
        return Ok((x0.to_vec(), trace));
    }

    let wolfe = settings.wolfe();
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true; // h_inv is an unscaled identity
    for iteration in 1..=settings.max_iters {
        let mut dir = -(&h_inv * &g);
        if g.dot(&dir) >= 0.0 {
            trace.hessian_resets += 1;
            h_inv.fill_with_identity();
            fresh = true;
            dir = -&g;
        }
        let (trial, evals, restarted) = loop {
            let initial = if fresh {
                (1.0 / dir.norm()).min(1.0)
            } else {
                1.0
            };
            match wolfe_line_search(objective, &x, f, &g, &dir, initial, &wolfe) {
                Ok(acc) => break (acc.trial, acc.evals, false),
                Err(LineSearchError::Exhausted {
                    evals,
                    best: Some(best),
                }) => break (best, evals, true),
                Err(e) => {
                    if let LineSearchError::Exhausted { evals, .. } = e {
                        fevals += evals;
                    }
                    if !fresh {
                        // retry once along steepest descent
                        h_inv.fill_with_identity();
                        fresh = true;
                        dir = -&g;
                        continue;
                    }
                    if let Some(last) = trace.records.last_mut() {
                        last.fevals = fevals;
                    }
                    trace.termination = Termination::LineSearchFailed(e.to_string());
                    return Ok((x.as_slice().to_vec(), trace));
                }
            }
        };
        fevals += evals;
        let s = &dir * trial.step;
        let y = &trial.grad - &g;
        x += &s;
        f = trial.value;
        g = trial.grad;
        trace.records.push(IterationRecord {
            iteration,
            loss: f,
            grad_norm: max_norm(&g),
            step: trial.step,
            fevals,
        });

        let sy = s.dot(&y);
        if restarted {
            h_inv.fill_with_identity();
            fresh = true;
        } else if sy > 1e-10 * s.norm() * y.norm() {
            if fresh {
                h_inv *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀH) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv.ger(-rho, &hy, &s, 1.0);
            h_inv.ger(-rho, &s, &hy, 1.0);
            h_inv.ger(rho * rho * yhy + rho, &s, &s, 1.0);
        } else {
            trace.skipped_updates += 1;
        }

        if max_norm(&g) <= settings.grad_tol {
            trace.termination = Termination::GradientTolerance;
            return Ok((x.as_slice().to_vec(), trace));
        }
    }
    trace.termination = Termination::MaxIterations;
    Ok((x.as_slice().to_vec(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shifted_sphere() {
        let c = [1.5, -2.0, 0.25];
        let mut f = |x: &[f64]| {
            let v: f64 = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
            (v, x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect())
        };
        let (x, trace) =
            minimize(&mut f, &[10.0, 10.0, -7.0], &OptimizerSettings::default()).unwrap();
        for (a, b) in x.iter().zip(&c) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(trace.iterations() <= 10);
        assert_eq!(trace.termination, Termination::GradientTolerance);
    }

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        (
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
            vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ],
        )
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let mut f = rosenbrock;
        let (x, trace) = minimize(&mut f, &[-1.2, 1.0], &OptimizerSettings::default()).unwrap();
        assert!(
            (x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6,
            "{x:?}"
        );
        for w in trace.records.windows(2) {
            assert!(w[1].loss < w[0].loss);
        }
    }

    #[test]
    fn already_optimal() {
        let mut f = |x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]);
        let (x, trace) = minimize(&mut f, &[0.0], &OptimizerSettings::default()).unwrap();
        assert_eq!(x, vec![0.0]);
        assert_eq!(trace.iterations(), 0);
    }

    #[test]
    fn rejects_non_finite_start_and_bad_settings() {
        let mut f = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert_eq!(
            minimize(&mut f, &[1.0], &OptimizerSettings::default()).unwrap_err(),
            OptimError::NonFiniteStart
        );
        let mut g = |x: &[f64]| (x[0], vec![1.0]);
        let bad = OptimizerSettings {
            c1: 0.9,
            c2: 0.1,
            ..Default::default()
        };
        assert!(matches!(
            minimize(&mut g, &[1.0], &bad),
            Err(OptimError::Settings(_))
        ));
    }

    #[test]
    fn random_convex_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for trial in 0..20 {
            let n = 2 + trial % 9;
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let a = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let mut f = |x: &[f64]| {
                let x = DVector::from_column_slice(x);
                let ax = &a * &x;
                (0.5 * x.dot(&ax) - b.dot(&x), (ax - &b).as_slice().to_vec())
            };
            let x0 = vec![0.0; n];
            let (x, trace) = minimize(&mut f, &x0, &OptimizerSettings::default()).unwrap();
            let grad = &a * DVector::from_vec(x) - &b;
            assert!(max_norm(&grad) < 1e-8, "n={n}: {}", max_norm(&grad));
            assert!(
                trace.iterations() <= n + 5,
                "n={n}: {} iterations",
                trace.iterations()
            );
            assert_eq!(trace.hessian_resets, 0);
            for w in trace.records.windows(2) {
                assert!(w[1].loss < w[0].loss);
            }
        }
    }

    #[test]
    fn trace_csv() {
        let mut f = rosenbrock;
        let (_, trace) = minimize(
            &mut f,
            &[-1.2, 1.0],
            &OptimizerSettings {
                max_iters: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(trace.termination, Termination::MaxIterations);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,loss,grad_norm,step,fevals\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
