//! Nominal training followed by optimal-transport refinement of the training set.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, OtSolver, TrainingConfig};
use crate::dynamics::DynamicalSystem;
use crate::evaluate::{compute_metrics, AnalyticReference, EvalError, Metrics};
use crate::grid::{CollocationSet, GridError, PointSet};
use crate::network::{NetworkError, PotentialNetwork};
use crate::optim::{minimize, OptimError, OptimTrace, Termination};
use crate::residual::{ResidualError, ResidualProblem};
use crate::transport::{
    cost_matrix, median_cost, resample, solve_transport, solve_transport_sinkhorn, ErrorEnsemble,
    Solver, TransportError, TransportPlan,
};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("asked for the top {m} of only {available} test points")]
    TooFewTestPoints { m: usize, available: usize },
    #[error("train_nominal must run before refinement")]
    NotTrained,
}

/// One row of the run history. Entry 0 is the nominal fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    pub iteration: usize,
    pub train_size: usize,
    /// Points appended in this iteration (0 for the nominal fit).
    pub added: usize,
    pub metrics: Metrics,
    pub loss: f64,
    pub optimizer_iterations: usize,
    pub termination: Termination,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transport: Option<TransportSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub added_points_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportSummary {
    pub solver: Solver,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub system: String,
    /// `baseline` when no refinement is configured, `ot` otherwise.
    pub method: String,
    pub seed: u64,
    pub entries: Vec<IterationEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn last(&self) -> Option<&IterationEntry> {
        self.entries.last()
    }

    /// Metrics only; free of timings, so identical runs serialize identically.
    pub fn metrics(&self) -> Vec<&Metrics> {
        self.entries.iter().map(|e| &e.metrics).collect()
    }
}

/// What one refinement iteration produced, beyond its record entry.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub selected: PointSet,
    pub selected_residuals: Vec<f64>,
    pub plan: TransportPlan,
    pub resampled: PointSet,
}

/// The `m` test points with the largest squared residual, in descending order.
/// Ties keep grid order.
pub fn top_m_errors(
    net: &PotentialNetwork,
    system: &DynamicalSystem,
    test_interior: &PointSet,
    m: usize,
) -> Result<(PointSet, Vec<f64>), TrainerError> {
    let problem = ResidualProblem::from_points(
        system,
        test_interior.clone(),
        PointSet::new(system.dim()),
        crate::residual::BoundaryMode::None,
    )?;
    select_top(&problem.residuals(net)?, test_interior, m)
}

fn select_top(
    residuals: &[f64],
    points: &PointSet,
    m: usize,
) -> Result<(PointSet, Vec<f64>), TrainerError> {
    if m > points.len() {
        return Err(TrainerError::TooFewTestPoints {
            m,
            available: points.len(),
        });
    }
    let mut order: Vec<usize> = (0..residuals.len()).collect();
    order.sort_by(|&a, &b| (residuals[b] * residuals[b]).total_cmp(&(residuals[a] * residuals[a])));
    let mut out = PointSet::new(points.dim());
    let mut r = Vec::with_capacity(m);
    for &i in &order[..m] {
        out.push(points.get(i))?;
        r.push(residuals[i]);
    }
    Ok((out, r))
}

pub struct Trainer {
    config: TrainingConfig,
    system: DynamicalSystem,
    train: CollocationSet,
    test: CollocationSet,
    test_problem: ResidualProblem,
    reference: Option<AnalyticReference>,
    net: PotentialNetwork,
    record: RunRecord,
    last_trace: Option<OptimTrace>,
}

impl Trainer {
    /// Validates the config and builds both grids. A missing seed is drawn from
    /// entropy and written back into the config.
    pub fn new(mut config: TrainingConfig) -> Result<Self, TrainerError> {
        config.validate()?;
        let seed = *config.seed.get_or_insert_with(rand::random);
        let system = config.build_system()?;
        let train = config.train_grid()?;
        let test = config.test_grid()?;
        let test_problem = ResidualProblem::from_points(
            &system,
            test.interior.clone(),
            PointSet::new(system.dim()),
            crate::residual::BoundaryMode::None,
        )?
        .with_reduction(config.reduction);
        let net = PotentialNetwork::init(system.dim(), config.hidden_width, seed)?;
        let record = RunRecord {
            system: config.system.clone(),
            method: if config.n_ot == 0 { "baseline" } else { "ot" }.into(),
            seed,
            entries: Vec::new(),
            error: None,
        };
        Ok(Self {
            reference: config.reference(),
            config,
            system,
            train,
            test,
            test_problem,
            net,
            record,
            last_trace: None,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn system(&self) -> &DynamicalSystem {
        &self.system
    }

    pub fn network(&self) -> &PotentialNetwork {
        &self.net
    }

    pub fn training_set(&self) -> &CollocationSet {
        &self.train
    }

    pub fn test_set(&self) -> &CollocationSet {
        &self.test
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn record_mut(&mut self) -> &mut RunRecord {
        &mut self.record
    }

    /// Optimizer trace of the most recent fit.
    pub fn last_trace(&self) -> Option<&OptimTrace> {
        self.last_trace.as_ref()
    }

    /// Minimizes the loss on the current training set, starting from the current
    /// parameters. The inverse Hessian estimate starts fresh every call.
    fn fit(&mut self) -> Result<OptimTrace, TrainerError> {
        let problem = ResidualProblem::new(&self.system, &self.train, self.config.boundary_mode)?
            .with_reduction(self.config.reduction);
        let mut scratch = self.net.clone();
        let p = scratch.num_params();
        let mut objective = |x: &[f64]| {
            scratch.set_params(x).expect("parameter count is fixed");
            match problem.loss_and_gradient(&scratch) {
                Ok(v) => v,
                Err(_) => (f64::INFINITY, vec![f64::NAN; p]),
            }
        };
        let (theta, trace) = minimize(&mut objective, self.net.params(), &self.config.optimizer)?;
        self.net.set_params(&theta)?;
        self.last_trace = Some(trace.clone());
        Ok(trace)
    }

    fn metrics(&self, iteration: usize) -> Result<Metrics, TrainerError> {
        let dx = vec![self.config.dx_test; self.system.dim()];
        Ok(compute_metrics(
            &self.net,
            &self.system,
            &self.test.interior,
            &self.test.domain,
            &dx,
            self.config.eps_pde_form,
            self.reference.as_ref(),
            iteration,
        )?)
    }

    fn entry(
        &self,
        iteration: usize,
        added: usize,
        trace: &OptimTrace,
        started: Instant,
        transport: Option<TransportSummary>,
    ) -> Result<IterationEntry, TrainerError> {
        Ok(IterationEntry {
            iteration,
            train_size: self.train.interior.len(),
            added,
            metrics: self.metrics(iteration)?,
            loss: trace.final_loss(),
            optimizer_iterations: trace.iterations(),
            termination: trace.termination.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
            transport,
            added_points_file: None,
        })
    }

    /// Fits the seeded network on the initial grid and records entry 0.
    pub fn train_nominal(&mut self) -> Result<&IterationEntry, TrainerError> {
        let started = Instant::now();
        let trace = self.fit()?;
        let entry = self.entry(0, 0, &trace, started, None)?;
        self.record.entries.clear();
        self.record.entries.push(entry);
        Ok(&self.record.entries[0])
    }

    fn solve_plan(&self, ensemble: &ErrorEnsemble) -> Result<TransportPlan, TrainerError> {
        let t = &self.config.transport;
        let cost = cost_matrix(ensemble.points(), t.cost);
        let use_exact = match t.solver {
            OtSolver::Exact => true,
            OtSolver::Sinkhorn => false,
            OtSolver::Auto => ensemble.len() <= t.sinkhorn_threshold,
        };
        Ok(if use_exact {
            solve_transport(ensemble, &cost)?
        } else {
            let eps = t.sinkhorn_epsilon_scale * median_cost(&cost, ensemble.len());
            solve_transport_sinkhorn(
                ensemble,
                &cost,
                eps.max(f64::MIN_POSITIVE),
                t.sinkhorn_max_sweeps,
                t.sinkhorn_tol,
            )?
        })
    }

    /// One refinement round: select, transport, resample, append, warm-started refit.
    pub fn refine_once(&mut self) -> Result<(&IterationEntry, Refinement), TrainerError> {
        if self.record.entries.is_empty() {
            return Err(TrainerError::NotTrained);
        }
        let started = Instant::now();
        let iteration = self.record.entries.len();
        let residuals = self.test_problem.residuals(&self.net)?;
        let (selected, selected_residuals) =
            select_top(&residuals, &self.test.interior, self.config.m)?;
        let ensemble = ErrorEnsemble::new(selected.clone(), &selected_residuals)?;
        let plan = self.solve_plan(&ensemble)?;
        let resampled = resample(&ensemble, &plan);
        let added = self
            .train
            .append_points_with(&resampled, self.config.dedup)?;
        let trace = self.fit()?;
        let summary = TransportSummary {
            solver: plan.solver,
            objective: plan.objective,
            iterations: plan.iterations,
            converged: plan.converged,
        };
        let entry = self.entry(iteration, added, &trace, started, Some(summary))?;
        self.record.entries.push(entry);
        Ok((
            self.record.entries.last().expect("just pushed"),
            Refinement {
                selected,
                selected_residuals,
                plan,
                resampled,
            },
        ))
    }

    /// Runs the configured number of refinement rounds. On failure the error is also
    /// stored in the record, which keeps every completed entry.
    pub fn ot_refinement_loop(&mut self) -> Result<&RunRecord, TrainerError> {
        for _ in 0..self.config.n_ot {
            if let Err(e) = self.refine_once() {
                self.record.error = Some(e.to_string());
                return Err(e);
            }
        }
        Ok(&self.record)
    }

    /// Nominal fit plus refinement.
    pub fn run(&mut self) -> Result<&RunRecord, TrainerError> {
        if let Err(e) = self.train_nominal() {
            self.record.error = Some(e.to_string());
            return Err(e);
        }
        self.ot_refinement_loop()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerSettings;

    fn small_config(n_ot: usize) -> TrainingConfig {
        TrainingConfig {
            system: "ou1d".into(),
            sigma2: 0.5,
            hidden_width: 6,
            m: 5,
            n_ot,
            dx_test: 0.125,
            optimizer: OptimizerSettings {
                max_iters: 40,
                ..OptimizerSettings::default()
            },
            seed: Some(4),
            ..TrainingConfig::default()
        }
        .resolved()
        .unwrap()
    }

    #[test]
    fn selection_is_stable_and_descending() {
        let pts = PointSet::from_rows(1, &[[0.0], [1.0], [2.0], [3.0], [4.0]]).unwrap();
        let r = [1.0, -3.0, 0.5, 3.0, 0.0];
        let (p, v) = select_top(&r, &pts, 3).unwrap();
        assert_eq!(v, vec![-3.0, 3.0, 1.0]);
        assert_eq!(p.as_flat(), &[1.0, 3.0, 0.0]);
        let (p, _) = select_top(&[0.0; 5], &pts, 2).unwrap();
        assert_eq!(p.as_flat(), &[0.0, 1.0]);
        let (p, _) = select_top(&r, &pts, 1).unwrap();
        assert_eq!(p.as_flat(), &[1.0]);
        assert!(matches!(
            select_top(&r, &pts, 6),
            Err(TrainerError::TooFewTestPoints { m: 6, available: 5 })
        ));
    }

    #[test]
    fn zero_iterations_equal_nominal() {
        let mut a = Trainer::new(small_config(0)).unwrap();
        a.run().unwrap();
        let mut b = Trainer::new(small_config(0)).unwrap();
        b.train_nominal().unwrap();
        assert_eq!(a.network().params(), b.network().params());
        assert_eq!(a.record().entries.len(), 1);
        assert_eq!(a.record().method, "baseline");
    }

    #[test]
    fn refinement_grows_and_warm_starts() {
        let mut t = Trainer::new(small_config(2)).unwrap();
        t.train_nominal().unwrap();
        let before = t.training_set().interior.clone();
        let theta = t.network().params().to_vec();
        let (entry, refinement) = t.refine_once().unwrap();
        assert_eq!(entry.added, 5);
        assert_eq!(entry.train_size, before.len() + 5);
        assert_eq!(refinement.plan.size(), 5);
        // old points kept, in order
        let now = &t.training_set().interior;
        assert_eq!(&now.as_flat()[..before.as_flat().len()], before.as_flat());
        // the refit started at the previous parameters: loss at θ_{i−1} on the new set is
        // never below the recorded final loss
        let problem =
            ResidualProblem::new(t.system(), t.training_set(), t.config().boundary_mode).unwrap();
        let prev = PotentialNetwork::from_params(1, 6, theta, 4).unwrap();
        assert!(problem.loss(&prev).unwrap().total >= t.record().entries[1].loss);
    }

    #[test]
    fn identical_seeds_identical_records() {
        let mut a = Trainer::new(small_config(2)).unwrap();
        let mut b = Trainer::new(small_config(2)).unwrap();
        a.run().unwrap();
        b.run().unwrap();
        assert_eq!(
            serde_json::to_string(&a.record().metrics()).unwrap(),
            serde_json::to_string(&b.record().metrics()).unwrap()
        );
    }

    #[test]
    fn refine_requires_nominal() {
        let mut t = Trainer::new(small_config(1)).unwrap();
        assert!(matches!(t.refine_once(), Err(TrainerError::NotTrained)));
    }
}
