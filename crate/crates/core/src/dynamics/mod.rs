//! Stochastic systems `dx = F(x) dt + Λ dW` with constant diffusion `D = ½ΛΛᵀ`.

mod expr;

pub use expr::{DriftExpression, Expr, ExprError, Func};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("unknown built-in system '{0}' (expected vdp, vdp_rayleigh or ou1d)")]
    UnknownBuiltin(String),
    #[error("noise intensity sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("expected {expected} drift components, got {got}")]
    DriftCount { expected: usize, got: usize },
    #[error("diffusion matrix must be {n}x{n}")]
    DiffusionShape { n: usize },
    #[error("diffusion matrix is not symmetric")]
    DiffusionAsymmetric,
    #[error("diffusion matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    DiffusionIndefinite(f64),
    #[error("drift component {component}: {source}")]
    Drift {
        component: usize,
        #[source]
        source: ExprError,
    },
}

/// Names of the systems that ship with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    /// Van der Pol oscillator.
    Vdp,
    /// Van der Pol–Rayleigh oscillator; has a closed-form stationary density.
    VdpRayleigh,
    /// Scalar Ornstein–Uhlenbeck process.
    Ou1d,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Vdp => "vdp",
            Builtin::VdpRayleigh => "vdp_rayleigh",
            Builtin::Ou1d => "ou1d",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, SystemError> {
        match name {
            "vdp" => Ok(Builtin::Vdp),
            "vdp_rayleigh" => Ok(Builtin::VdpRayleigh),
            "ou1d" => Ok(Builtin::Ou1d),
            other => Err(SystemError::UnknownBuiltin(other.to_string())),
        }
    }

    fn drift_sources(self) -> &'static [&'static str] {
        match self {
            Builtin::Vdp => &["x2", "(1 - x1^2)*x2 - x1"],
            Builtin::VdpRayleigh => &["x2", "(1 - x1^2 - x2^2)*x2 - x1"],
            Builtin::Ou1d => &["-x1"],
        }
    }
}

/// Drift, per-component divergence terms and constant diffusion of an n-dimensional SDE.
///
/// Immutable after construction, so it can be shared freely between threads.
#[derive(Debug, Clone)]
pub struct DynamicalSystem {
    name: String,
    drift: Vec<DriftExpression>,
    divergence: Vec<DriftExpression>,
    diffusion: DMatrix<f64>,
    sigma: f64,
}

impl DynamicalSystem {
    /// Builds a system from drift expressions. `divergence[i]` is derived as `∂F_i/∂x_i`.
    pub fn new(
        name: impl Into<String>,
        drift: Vec<DriftExpression>,
        diffusion: DMatrix<f64>,
        sigma: f64,
    ) -> Result<Self, SystemError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SystemError::InvalidSigma(sigma));
        }
        let n = drift.len();
        if n == 0 {
            return Err(SystemError::DriftCount {
                expected: 1,
                got: 0,
            });
        }
        for (i, d) in drift.iter().enumerate() {
            if d.dim() != n {
                return Err(SystemError::Drift {
                    component: i + 1,
                    source: ExprError::DimensionMismatch {
                        expected: n,
                        got: d.dim(),
                    },
                });
            }
        }
        if diffusion.nrows() != n || diffusion.ncols() != n {
            return Err(SystemError::DiffusionShape { n });
        }
        if diffusion != diffusion.transpose() {
            return Err(SystemError::DiffusionAsymmetric);
        }
        let min_eig = diffusion
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-12 {
            return Err(SystemError::DiffusionIndefinite(min_eig));
        }
        let divergence = drift
            .iter()
            .enumerate()
            .map(|(i, f)| f.differentiate(i + 1))
            .collect();
        Ok(Self {
            name: name.into(),
            drift,
            divergence,
            diffusion,
            sigma,
        })
    }

    /// Parses one drift expression per component.
    pub fn from_sources<S: AsRef<str>>(
        name: impl Into<String>,
        sources: &[S],
        diffusion: DMatrix<f64>,
        sigma: f64,
    ) -> Result<Self, SystemError> {
        let n = sources.len();
        let drift = sources
            .iter()
            .enumerate()
            .map(|(i, s)| {
                DriftExpression::parse(s.as_ref(), n).map_err(|source| SystemError::Drift {
                    component: i + 1,
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, drift, diffusion, sigma)
    }

    /// Built-in oscillators. Noise enters the last state only: `D = diag(0, σ²/2)` in 2-D
    /// and `D = σ²/2` for the scalar OU process.
    pub fn builtin(which: Builtin, sigma: f64) -> Result<Self, SystemError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SystemError::InvalidSigma(sigma));
        }
        let sources = which.drift_sources();
        let n = sources.len();
        let mut diffusion = DMatrix::zeros(n, n);
        diffusion[(n - 1, n - 1)] = 0.5 * sigma * sigma;
        Self::from_sources(which.name(), sources, diffusion, sigma)
    }

    pub fn make_builtin(name: &str, sigma: f64) -> Result<Self, SystemError> {
        Self::builtin(Builtin::from_name(name)?, sigma)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn drift(&self) -> &[DriftExpression] {
        &self.drift
    }

    pub fn divergence_terms(&self) -> &[DriftExpression] {
        &self.divergence
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }

    /// Returns `(F(x), Σ_i ∂F_i/∂x_i (x))`.
    pub fn eval_drift_and_divergence(&self, x: &[f64]) -> Result<(Vec<f64>, f64), ExprError> {
        let f = self
            .drift
            .iter()
            .map(|d| d.eval(x))
            .collect::<Result<Vec<_>, _>>()?;
        let mut div = 0.0;
        for d in &self.divergence {
            div += d.eval(x)?;
        }
        Ok((f, div))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builtin_drifts() {
        let vdp = DynamicalSystem::make_builtin("vdp", 0.1f64.sqrt()).unwrap();
        let (f, _) = vdp.eval_drift_and_divergence(&[1.0, 2.0]).unwrap();
        assert_eq!(f, vec![2.0, -1.0]);
        let (f, div) = vdp.eval_drift_and_divergence(&[0.0, 1.0]).unwrap();
        assert_eq!(f, vec![1.0, 1.0]);
        assert_eq!(div, 1.0);
        let (f, div) = vdp.eval_drift_and_divergence(&[0.0, 0.0]).unwrap();
        assert_eq!((f, div), (vec![0.0, 0.0], 1.0));

        let vdpr = DynamicalSystem::make_builtin("vdp_rayleigh", 0.1f64.sqrt()).unwrap();
        let (f, _) = vdpr.eval_drift_and_divergence(&[0.0, 0.0]).unwrap();
        assert_eq!(f, vec![0.0, 0.0]);
        let (f, div) = vdpr.eval_drift_and_divergence(&[1.0, 1.0]).unwrap();
        assert_eq!(f, vec![1.0, -2.0]);
        assert_eq!(div, -3.0);

        let ou = DynamicalSystem::make_builtin("ou1d", 1.0).unwrap();
        let (f, div) = ou.eval_drift_and_divergence(&[0.7]).unwrap();
        assert_eq!((f, div), (vec![-0.7], -1.0));
    }

    #[test]
    fn builtin_diffusion() {
        let s = 0.1f64.sqrt();
        let vdp = DynamicalSystem::builtin(Builtin::Vdp, s).unwrap();
        let d = vdp.diffusion();
        assert_eq!(d[(0, 0)], 0.0);
        assert_eq!(d[(0, 1)], 0.0);
        assert!((d[(1, 1)] - 0.05).abs() < 1e-15);
        let ou = DynamicalSystem::builtin(Builtin::Ou1d, 2.0).unwrap();
        assert_eq!(ou.diffusion()[(0, 0)], 2.0);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(
            DynamicalSystem::make_builtin("lorenz", 1.0),
            Err(SystemError::UnknownBuiltin(_))
        ));
        assert!(matches!(
            DynamicalSystem::make_builtin("vdp", 0.0),
            Err(SystemError::InvalidSigma(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            DynamicalSystem::from_sources("c", &["x2", "x1"], asym, 1.0),
            Err(SystemError::DiffusionAsymmetric)
        ));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            DynamicalSystem::from_sources("c", &["x2", "x1"], indefinite, 1.0),
            Err(SystemError::DiffusionIndefinite(_))
        ));
        assert!(matches!(
            DynamicalSystem::from_sources("c", &["x3", "x1"], DMatrix::identity(2, 2), 1.0),
            Err(SystemError::Drift { component: 1, .. })
        ));
    }

    #[test]
    fn divergence_matches_finite_differences() {
        let custom = DynamicalSystem::from_sources(
            "custom",
            &[
                "sin(x1)*x2 - x1^3",
                "exp(-x2^2/2) + tanh(x1*x2)/(2 + cos(x2))",
            ],
            DMatrix::identity(2, 2) * 0.05,
            0.1f64.sqrt(),
        )
        .unwrap();
        let systems = [
            DynamicalSystem::make_builtin("vdp", 0.3).unwrap(),
            DynamicalSystem::make_builtin("vdp_rayleigh", 0.3).unwrap(),
            DynamicalSystem::make_builtin("ou1d", 0.3).unwrap(),
            custom,
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for sys in &systems {
            let n = sys.dim();
            for _ in 0..100 {
                let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let mut fd = 0.0;
                for i in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    fd += (sys.drift()[i].eval(&xp).unwrap() - sys.drift()[i].eval(&xm).unwrap())
                        / (2.0 * h);
                }
                let (_, div) = sys.eval_drift_and_divergence(&x).unwrap();
                let err = (fd - div).abs() / div.abs().max(1.0);
                assert!(err < 1e-6, "{}: {err}", sys.name());
            }
        }
    }
}
