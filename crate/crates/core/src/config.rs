//! Run configuration. The JSON schema is closed: unknown keys are rejected.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Builtin, DynamicalSystem, SystemError};
use crate::evaluate::{analytic_reference, AnalyticReference, EpsForm};
use crate::grid::{CollocationSet, Domain, GridError};
use crate::optim::OptimizerSettings;
use crate::par::Reduction;
use crate::residual::BoundaryMode;
use crate::transport::CostMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A system given by drift expressions instead of a built-in name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSystem {
    /// One expression per state, in `x1..xn`.
    pub drift: Vec<String>,
    /// Full `n×n` diffusion matrix; defaults to `σ²/2·I`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtSolver {
    /// Exact up to `sinkhorn_threshold` points, Sinkhorn above.
    #[default]
    Auto,
    Exact,
    Sinkhorn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub solver: OtSolver,
    pub cost: CostMode,
    pub sinkhorn_threshold: usize,
    /// Regularization as a fraction of the median pairwise cost.
    pub sinkhorn_epsilon_scale: f64,
    pub sinkhorn_max_sweeps: usize,
    pub sinkhorn_tol: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            solver: OtSolver::Auto,
            cost: CostMode::Euclidean,
            sinkhorn_threshold: 512,
            sinkhorn_epsilon_scale: 0.01,
            sinkhorn_max_sweeps: 20_000,
            sinkhorn_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Built-in name (`vdp`, `vdp_rayleigh`, `ou1d`) or `custom`.
    pub system: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSystem>,
    /// Noise intensity σ² (the diffusion entry is σ²/2).
    pub sigma2: f64,
    /// Defaults per built-in system.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dx_train: Option<f64>,
    pub dx_test: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "nOT")]
    pub n_ot: usize,
    #[serde(rename = "H")]
    pub hidden_width: usize,
    pub optimizer: OptimizerSettings,
    pub boundary_mode: BoundaryMode,
    pub eps_pde_form: EpsForm,
    pub transport: TransportConfig,
    /// Drop resampled points that coincide exactly with existing ones. Off by default:
    /// exact plans often map several columns onto one source point, and the duplicates
    /// act as extra loss weight there.
    pub dedup: bool,
    pub reduction: Reduction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            system: "vdp_rayleigh".into(),
            custom: None,
            sigma2: 0.1,
            domain: None,
            dx_train: None,
            dx_test: 0.05,
            m: 200,
            n_ot: 10,
            hidden_width: 48,
            optimizer: OptimizerSettings::default(),
            boundary_mode: BoundaryMode::default(),
            eps_pde_form: EpsForm::Eta,
            transport: TransportConfig::default(),
            dedup: false,
            reduction: Reduction::Ordered,
            seed: None,
        }
    }
}

fn default_box(system: &str) -> Option<(usize, f64, f64, f64)> {
    // (n, lo, hi, dx_train)
    match system {
        "vdp_rayleigh" => Some((2, -2.0, 2.0, 0.25)),
        "vdp" => Some((2, -4.0, 4.0, 0.1)),
        "ou1d" => Some((1, -3.0, 3.0, 0.25)),
        _ => None,
    }
}

impl TrainingConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let raw: Self = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        raw.resolved()
    }

    /// Reads, fills defaults and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Materializes the per-system defaults and validates the result.
    pub fn resolved(mut self) -> Result<Self, ConfigError> {
        let defaults = default_box(&self.system);
        if self.domain.is_none() {
            let (n, lo, hi, _) = defaults.ok_or_else(|| {
                ConfigError::Invalid(format!("system `{}` needs an explicit domain", self.system))
            })?;
            self.domain = Some(DomainConfig {
                lower: vec![lo; n],
                upper: vec![hi; n],
            });
        }
        if self.dx_train.is_none() {
            let (_, _, _, dx) = defaults.ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "system `{}` needs an explicit dx_train",
                    self.system
                ))
            })?;
            self.dx_train = Some(dx);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.m == 0 {
            return bad("M must be >= 1".into());
        }
        if self.hidden_width == 0 {
            return bad("H must be >= 1".into());
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        let dx_train = self.dx_train.unwrap_or(f64::NAN);
        if !(dx_train > 0.0) || !(self.dx_test > 0.0) {
            return bad("dx_train and dx_test must be positive".into());
        }
        if self.dx_test > dx_train {
            return bad(format!(
                "dx_test ({}) must not exceed dx_train ({dx_train})",
                self.dx_test
            ));
        }
        if self.system == "custom" && self.custom.is_none() {
            return bad("system `custom` needs a `custom` block".into());
        }
        if self.system != "custom" && self.custom.is_some() {
            return bad("`custom` block given for a built-in system".into());
        }
        if let BoundaryMode::EtaTarget { eta_max } = self.boundary_mode {
            if !eta_max.is_finite() {
                return bad("eta_max must be finite".into());
            }
        }
        let t = &self.transport;
        if !(t.sinkhorn_epsilon_scale > 0.0)
            || !(t.sinkhorn_tol > 0.0)
            || t.sinkhorn_max_sweeps == 0
        {
            return bad("sinkhorn settings must be positive".into());
        }
        self.optimizer
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let system = self.build_system()?;
        let domain = self.domain()?;
        if domain.dim() != system.dim() {
            return bad(format!(
                "domain has {} axes but the system has {} states",
                domain.dim(),
                system.dim()
            ));
        }
        domain.nodes_per_axis(&vec![dx_train; domain.dim()])?;
        domain.nodes_per_axis(&vec![self.dx_test; domain.dim()])?;
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn build_system(&self) -> Result<DynamicalSystem, ConfigError> {
        match &self.custom {
            None => Ok(DynamicalSystem::builtin(
                Builtin::from_name(&self.system)?,
                self.sigma(),
            )?),
            Some(c) => {
                let n = c.drift.len();
                let diffusion = match &c.diffusion {
                    Some(rows) => {
                        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                            return Err(ConfigError::Invalid(format!("diffusion must be {n}x{n}")));
                        }
                        DMatrix::from_fn(n, n, |i, j| rows[i][j])
                    }
                    None => DMatrix::identity(n, n) * (0.5 * self.sigma2),
                };
                Ok(DynamicalSystem::from_sources(
                    "custom",
                    &c.drift,
                    diffusion,
                    self.sigma(),
                )?)
            }
        }
    }

    pub fn domain(&self) -> Result<Domain, ConfigError> {
        let d = self
            .domain
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("domain not resolved".into()))?;
        Ok(Domain::new(d.lower.clone(), d.upper.clone())?)
    }

    pub fn dx_train(&self) -> f64 {
        self.dx_train.expect("resolved config")
    }

    pub fn train_grid(&self) -> Result<CollocationSet, ConfigError> {
        let d = self.domain()?;
        let n = d.dim();
        Ok(CollocationSet::uniform_grid(&d, &vec![self.dx_train(); n])?)
    }

    pub fn test_grid(&self) -> Result<CollocationSet, ConfigError> {
        let d = self.domain()?;
        let n = d.dim();
        Ok(CollocationSet::uniform_grid(&d, &vec![self.dx_test; n])?)
    }

    pub fn reference(&self) -> Option<AnalyticReference> {
        if self.custom.is_some() {
            return None;
        }
        analytic_reference(&self.system, self.sigma()).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_resolves_defaults() {
        let c = TrainingConfig::from_json(r#"{"system": "vdp_rayleigh"}"#, "inline").unwrap();
        assert_eq!(c.hidden_width, 48);
        assert_eq!(c.m, 200);
        assert_eq!(c.n_ot, 10);
        assert_eq!(c.optimizer.max_iters, 10_000);
        assert_eq!(c.dx_train, Some(0.25));
        assert_eq!(c.domain.as_ref().unwrap().lower, vec![-2.0, -2.0]);
        assert_eq!(c.train_grid().unwrap().interior.len(), 225);
        assert_eq!(c.test_grid().unwrap().interior.len(), 6241);
        assert!(c.reference().is_some());
    }

    #[test]
    fn vdp_defaults() {
        let c = TrainingConfig::from_json(r#"{"system": "vdp"}"#, "inline").unwrap();
        assert_eq!(c.train_grid().unwrap().interior.len(), 6241);
        assert_eq!(c.test_grid().unwrap().interior.len(), 25281);
        assert!(c.reference().is_none());
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"nOT": -1}"#,
            r#"{"M": 0}"#,
            r#"{"bogus": 1}"#,
            r#"{"optimizer": {"max_iter": 5}}"#,
            r#"{"dx_train": 0.05, "dx_test": 0.1}"#,
            r#"{"dx_train": 0.3}"#,
            r#"{"system": "lorenz"}"#,
            r#"{"sigma2": 0}"#,
        ] {
            assert!(TrainingConfig::from_json(text, "inline").is_err(), "{text}");
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = TrainingConfig::from_json("{\n  \"M\": 2,,\n}", "cfg.json").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.starts_with("cfg.json:") && msg.contains("line 2"),
            "{msg}"
        );
    }

    #[test]
    fn round_trip() {
        let c = TrainingConfig::from_json(
            r#"{"system": "ou1d", "seed": 3, "boundary_mode": {"kind": "eta_target", "eta_max": 9}}"#,
            "inline",
        )
        .unwrap();
        let again = TrainingConfig::from_json(&c.to_json(), "dump").unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn custom_system() {
        let c = TrainingConfig::from_json(
            r#"{"system": "custom", "custom": {"drift": ["-x1 + x2", "-x2"]},
                "domain": {"lower": [-1, -1], "upper": [1, 1]}, "dx_train": 0.5, "dx_test": 0.25}"#,
            "inline",
        )
        .unwrap();
        let sys = c.build_system().unwrap();
        assert_eq!(sys.dim(), 2);
        assert_eq!(sys.diffusion()[(0, 0)], 0.05);
        assert!(c.reference().is_none());
        assert!(TrainingConfig::from_json(r#"{"system": "custom"}"#, "inline").is_err());
    }
}
