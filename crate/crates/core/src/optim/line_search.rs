//! Strong Wolfe line search (bracketing + zoom with safeguarded cubic interpolation).

use nalgebra::DVector;
use thiserror::Error;

use super::Objective;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WolfeParams {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
    pub step_max: f64,
    /// If the secant estimate of the line minimizer differs from an accepted first
    /// trial by more than this relative amount, one extra evaluation tries it.
    pub refine_tol: f64,
}

impl Default for WolfeParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.9,
            max_evals: 50,
            step_max: 1e6,
            refine_tol: 0.1,
        }
    }
}

/// An evaluated trial point along the search direction.
#[derive(Debug, Clone)]
pub struct Trial {
    pub step: f64,
    pub value: f64,
    pub grad: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Accepted {
    pub trial: Trial,
    pub evals: usize,
}

#[derive(Debug, Error)]
pub enum LineSearchError {
    #[error("direction is not a descent direction (g·d = {0:e})")]
    NotDescent(f64),
    #[error("line search exhausted after {evals} evaluations")]
    Exhausted {
        evals: usize,
        /// Lowest trial point that satisfied sufficient decrease, if any.
        best: Option<Trial>,
    },
}

struct Phi<'a, O: Objective> {
    objective: &'a mut O,
    x: &'a DVector<f64>,
    dir: &'a DVector<f64>,
    evals: usize,
    f0: f64,
    d0: f64,
    c1: f64,
    best: Option<Trial>,
}

impl<O: Objective> Phi<'_, O> {
    fn eval(&mut self, step: f64) -> (Trial, f64) {
        self.evals += 1;
        let point = self.x + self.dir * step;
        let (value, grad) = self.objective.evaluate(point.as_slice());
        let value = if value.is_finite() {
            value
        } else {
            f64::INFINITY
        };
        let grad = DVector::from_vec(grad);
        let slope = if value.is_finite() {
            grad.dot(self.dir)
        } else {
            f64::NAN
        };
        let trial = Trial { step, value, grad };
        if self.armijo(&trial) && self.best.as_ref().map_or(true, |b| trial.value < b.value) {
            self.best = Some(trial.clone());
        }
        (trial, slope)
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.value.is_finite() && t.value <= self.f0 + self.c1 * t.step * self.d0 && t.value < self.f0
    }
}

/// Minimizer of the cubic through `(a, fa, da)` and `(b, fb, db)`, or `None` if degenerate.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !disc.is_finite() || disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Finds a step satisfying the strong Wolfe conditions along `dir` from `x`.
///
/// `f0`/`g0` are the objective value and gradient at `x`. If the step reaches
/// `step_max` while sufficient decrease still holds, `step_max` is accepted.
pub fn wolfe_line_search<O: Objective>(
    objective: &mut O,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    dir: &DVector<f64>,
    initial_step: f64,
    params: &WolfeParams,
) -> Result<Accepted, LineSearchError> {
    let d0 = g0.dot(dir);
    if !(d0 < 0.0) {
        return Err(LineSearchError::NotDescent(d0));
    }
    let mut phi = Phi {
        objective,
        x,
        dir,
        evals: 0,
        f0,
        d0,
        c1: params.c1,
        best: None,
    };
    let curvature_ok = |slope: f64| slope.abs() <= -params.c2 * d0;

    let mut prev = (0.0, f0, d0);
    let mut step = initial_step.min(params.step_max).max(f64::MIN_POSITIVE);
    let mut first = true;
    while phi.evals < params.max_evals {
        let (trial, slope) = phi.eval(step);
        let sufficient = trial.value <= f0 + params.c1 * step * d0;
        if !sufficient || (!first && trial.value >= prev.1) {
            let hi = (step, trial.value, slope);
            return zoom(&mut phi, prev, hi, params, curvature_ok);
        }
        if curvature_ok(slope) {
            let trial = if first {
                refine(&mut phi, trial, slope, params, &curvature_ok)
            } else {
                trial
            };
            let evals = phi.evals;
            return Ok(Accepted { trial, evals });
        }
        if slope >= 0.0 {
            let lo = (step, trial.value, slope);
            return zoom(&mut phi, lo, prev, params, curvature_ok);
        }
        if step >= params.step_max {
            let evals = phi.evals;
            return Ok(Accepted { trial, evals });
        }
        prev = (step, trial.value, slope);
        step = (4.0 * step).min(params.step_max);
        first = false;
    }
    Err(LineSearchError::Exhausted {
        evals: phi.evals,
        best: phi.best,
    })
}

/// Tries the secant minimizer `t·d0/(d0 − d(t))` of the directional derivative. It
/// replaces `trial` only if it also satisfies strong Wolfe and has a lower value.
fn refine<O: Objective>(
    phi: &mut Phi<'_, O>,
    trial: Trial,
    slope: f64,
    params: &WolfeParams,
    curvature_ok: &impl Fn(f64) -> bool,
) -> Trial {
    let (f0, d0) = (phi.f0, phi.d0);
    let denom = d0 - slope;
    if !(denom < 0.0) || phi.evals >= params.max_evals {
        return trial;
    }
    let target = (trial.step * d0 / denom).min(params.step_max);
    if !target.is_finite() || (target / trial.step - 1.0).abs() <= params.refine_tol {
        return trial;
    }
    let (candidate, c_slope) = phi.eval(target);
    let wolfe = candidate.value <= f0 + params.c1 * target * d0 && curvature_ok(c_slope);
    if wolfe && candidate.value <= trial.value {
        candidate
    } else {
        trial
    }
}

fn zoom<O: Objective>(
    phi: &mut Phi<'_, O>,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    params: &WolfeParams,
    curvature_ok: impl Fn(f64) -> bool,
) -> Result<Accepted, LineSearchError> {
    let (f0, d0) = (phi.f0, phi.d0);
    while phi.evals < params.max_evals {
        let (a, b) = (lo.0.min(hi.0), lo.0.max(hi.0));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1e-300) {
            break;
        }
        let guard = 0.1 * width;
        let step = match (hi.1.is_finite() && hi.2.is_finite())
            .then(|| cubic_min(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2))
            .flatten()
        {
            Some(t) if t >= a + guard && t <= b - guard => t,
            _ => 0.5 * (lo.0 + hi.0),
        };
        let (trial, slope) = phi.eval(step);
        if trial.value > f0 + params.c1 * step * d0 || trial.value >= lo.1 {
            hi = (step, trial.value, slope);
        } else {
            if curvature_ok(slope) {
                let evals = phi.evals;
                return Ok(Accepted { trial, evals });
            }
            if slope * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (step, trial.value, slope);
        }
    }
    Err(LineSearchError::Exhausted {
        evals: phi.evals,
        best: phi.best.take(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_wolfe(f0: f64, d0: f64, acc: &Accepted, dir: &DVector<f64>, p: &WolfeParams) {
        let t = &acc.trial;
        assert!(t.value <= f0 + p.c1 * t.step * d0);
        assert!(t.grad.dot(dir).abs() <= -p.c2 * d0);
    }

    #[test]
    fn quadratic_accepts_near_minimizer() {
        let mut f = |x: &[f64]| ((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)]);
        let x = DVector::from_vec(vec![0.0]);
        let g0 = DVector::from_vec(vec![-2.0]);
        let dir = DVector::from_vec(vec![1.0]);
        let p = WolfeParams::default();
        let acc = wolfe_line_search(&mut f, &x, 1.0, &g0, &dir, 1.0, &p).unwrap();
        assert!((acc.trial.step - 1.0).abs() < 1e-12);
        check_wolfe(1.0, -2.0, &acc, &dir, &p);

        // overshooting start still lands on a Wolfe point
        let tight = WolfeParams { c2: 0.1, ..p };
        let acc = wolfe_line_search(&mut f, &x, 1.0, &g0, &dir, 7.3, &tight).unwrap();
        check_wolfe(1.0, -2.0, &acc, &dir, &tight);
        assert!((acc.trial.step - 1.0).abs() < 0.1);
    }

    #[test]
    fn ascent_direction_rejected() {
        let mut f = |x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]);
        let x = DVector::from_vec(vec![1.0]);
        let g0 = DVector::from_vec(vec![2.0]);
        let dir = DVector::from_vec(vec![1.0]);
        let r = wolfe_line_search(&mut f, &x, 1.0, &g0, &dir, 1.0, &WolfeParams::default());
        assert!(matches!(r, Err(LineSearchError::NotDescent(_))));
    }

    #[test]
    fn linear_function_takes_capped_step() {
        let mut f = |x: &[f64]| (-3.0 * x[0], vec![-3.0]);
        let x = DVector::from_vec(vec![0.0]);
        let g0 = DVector::from_vec(vec![-3.0]);
        let dir = DVector::from_vec(vec![1.0]);
        let p = WolfeParams {
            step_max: 1000.0,
            ..WolfeParams::default()
        };
        let acc = wolfe_line_search(&mut f, &x, 0.0, &g0, &dir, 1.0, &p).unwrap();
        assert_eq!(acc.trial.step, 1000.0);
        assert!(acc.trial.value < 0.0);
    }

    #[test]
    fn non_finite_values_shrink_the_step() {
        // log barrier: undefined beyond x = 2
        let mut f = |x: &[f64]| {
            if x[0] >= 2.0 {
                (f64::NAN, vec![f64::NAN])
            } else {
                (
                    x[0] * x[0] - 2.0 * x[0] - (2.0 - x[0]).ln(),
                    vec![2.0 * x[0] - 2.0 + 1.0 / (2.0 - x[0])],
                )
            }
        };
        let x = DVector::from_vec(vec![0.0]);
        let (f0, g) = f(&[0.0]);
        let g0 = DVector::from_vec(g);
        let dir = -&g0;
        let p = WolfeParams::default();
        let acc = wolfe_line_search(&mut f, &x, f0, &g0, &dir, 10.0, &p).unwrap();
        check_wolfe(f0, g0.dot(&dir), &acc, &dir, &p);
    }
}
