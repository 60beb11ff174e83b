//! `solver run`: the full training pipeline with artifacts on disk.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use fpk_core::evaluate::SolutionField;
use fpk_core::grid::PointSet;
use fpk_core::io::{coord_header, write_numeric_csv};
use fpk_core::transport::write_points_csv;
use fpk_core::{BoundaryMode, Reduction, ResidualProblem, Trainer, TrainingConfig};

use crate::manifest::{inventory, now, RunManifest};
use crate::{CliResult, OUTPUT_DIR_ENV};

pub struct RunArgs {
    pub config: PathBuf,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub out: Option<PathBuf>,
}

pub const MANIFEST: &str = "manifest.json";
pub const RECORD: &str = "record.json";
pub const METRICS: &str = "metrics.json";

pub fn output_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("fpk-output"))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_file(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn execute(args: &RunArgs) -> CliResult {
    let mut config = TrainingConfig::load(&args.config)?;
    if args.deterministic {
        if config.seed.is_none() {
            return Err("--deterministic needs a `seed` in the config".into());
        }
        config.reduction = Reduction::Ordered;
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let dir = output_dir(args.out.as_deref());
    fs::create_dir_all(&dir)?;

    let started = now();
    let mut manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        seed: config.seed,
        deterministic: args.deterministic,
        threads: rayon::current_num_threads(),
        started,
        finished: String::new(),
        files: Vec::new(),
        error: None,
    };

    let mut trainer = None;
    let outcome = pipeline(config, &dir, &mut trainer);
    if let Err(e) = &outcome {
        manifest.error = Some(e.to_string());
        if let Some(t) = trainer.as_mut() {
            t.record_mut().error = Some(e.to_string());
            write_json(&dir.join(RECORD), t.record())?;
        }
    }
    if let Some(t) = &trainer {
        manifest.config = t.config().clone();
        manifest.seed = t.config().seed;
    }
    manifest.finished = now();
    manifest.files = inventory(&dir, MANIFEST)?;
    write_json(&dir.join(MANIFEST), &manifest)?;
    outcome
}

fn persist(trainer: &Trainer, dir: &Path) -> CliResult {
    write_json(&dir.join(RECORD), trainer.record())?;
    write_json(&dir.join(METRICS), &trainer.record().metrics())?;
    Ok(())
}

fn pipeline(config: TrainingConfig, dir: &Path, slot: &mut Option<Trainer>) -> CliResult {
    let trainer = slot.insert(Trainer::new(config)?);
    write_json(&dir.join("config.json"), trainer.config())?;
    trainer
        .training_set()
        .write_csv(csv_file(dir, "points_00.csv")?)?;

    let report = |trainer: &Trainer, it: usize| -> CliResult {
        let e = trainer.record().last().expect("entry recorded");
        eprintln!(
            "iter {it:2}  N_S {:6}  loss {:.3e}  eps_pde {:.3e}  eps_rho {}  ({} BFGS its, {:.1}s)",
            e.train_size,
            e.loss,
            e.metrics.eps_pde,
            e.metrics.eps_rho.map_or("-".into(), |v| format!("{v:.3e}")),
            e.optimizer_iterations,
            e.wall_time_s,
        );
        if let Some(trace) = trainer.last_trace() {
            trace.write_csv(csv_file(dir, &format!("trace_{it:02}.csv"))?)?;
        }
        persist(trainer, dir)
    };

    trainer.train_nominal()?;
    report(trainer, 0)?;
    for it in 1..=trainer.config().n_ot {
        let (_, refinement) = trainer.refine_once()?;
        let added_name = format!("added_{it:02}.csv");
        write_points_csv(&refinement.resampled, csv_file(dir, &added_name)?)?;
        refinement
            .plan
            .write_triplets_csv(csv_file(dir, &format!("plan_{it:02}.csv"))?)?;
        write_selected(
            &refinement.selected,
            &refinement.selected_residuals,
            dir,
            it,
        )?;
        if let Some(e) = trainer.record_mut().entries.last_mut() {
            e.added_points_file = Some(added_name);
        }
        report(trainer, it)?;
    }

    let test = trainer.test_set();
    let n = test.domain.dim();
    let dx = vec![trainer.config().dx_test; n];
    SolutionField::on_grid(trainer.network(), &test.domain, &dx)?
        .write_csv(csv_file(dir, "solution.csv")?)?;
    let problem = ResidualProblem::from_points(
        trainer.system(),
        test.interior.clone(),
        PointSet::new(n),
        BoundaryMode::None,
    )?;
    let residuals = problem.residuals(trainer.network())?;
    problem.write_residual_csv(csv_file(dir, "residuals.csv")?, &residuals)?;
    trainer
        .training_set()
        .write_csv(csv_file(dir, "train_points.csv")?)?;
    write_json(&dir.join("network.json"), &trainer.network().snapshot())?;
    persist(trainer, dir)
}

fn write_selected(points: &PointSet, residuals: &[f64], dir: &Path, it: usize) -> CliResult {
    let header = coord_header(points.dim(), &["R"]);
    let rows = points.iter().zip(residuals).map(|(x, r)| {
        let mut row = x.to_vec();
        row.push(*r);
        row
    });
    write_numeric_csv(
        csv_file(dir, &format!("selected_{it:02}.csv"))?,
        &header,
        rows,
    )?;
    Ok(())
}
