//! Stationary Fokker–Planck densities from a physics-informed potential network,
//! with optimal-transport refinement of the collocation set.
//!
//! The density is written `ρ = N0·exp(−η)`; a one-hidden-layer tanh network represents
//! `η`, trained by BFGS on the potential-form residual. After a nominal fit, each
//! refinement round takes the test points with the largest squared residual, solves a
//! transportation LP that moves a uniform ensemble onto the error distribution, and
//! adds the barycentric images of the plan to the training set.
//!
//! - [`dynamics`]: drift DSL, built-in oscillators, diffusion
//! - [`grid`]: box domains and collocation grids
//! - [`network`]: the potential network and its closed-form derivatives
//! - [`residual`]: residual, loss and loss gradient
//! - [`optim`]: BFGS with strong Wolfe line search
//! - [`transport`]: transportation simplex, Sinkhorn, resampling
//! - [`trainer`]: the refinement loop
//! - [`evaluate`]: normalization, error metrics, closed-form references
//! - [`config`]: run configuration

pub mod config;
pub mod dynamics;
pub mod evaluate;
pub mod grid;
pub mod io;
pub mod network;
pub mod optim;
pub mod par;
pub mod residual;
pub mod trainer;
pub mod transport;

pub use config::{ConfigError, TrainingConfig};
pub use dynamics::{Builtin, DriftExpression, DynamicalSystem};
pub use evaluate::{Metrics, SolutionField};
pub use grid::{CollocationSet, Domain, PointSet};
pub use network::{NetworkJet, NetworkSnapshot, PotentialNetwork};
pub use optim::{minimize, OptimTrace, OptimizerSettings};
pub use par::Reduction;
pub use residual::{BoundaryMode, LossReport, ResidualProblem};
pub use trainer::{IterationEntry, RunRecord, Trainer};
pub use transport::{ErrorEnsemble, TransportPlan};
