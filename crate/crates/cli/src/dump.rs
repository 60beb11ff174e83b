//! `solver dump-solution`: a saved network evaluated on a grid.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use fpk_core::evaluate::SolutionField;
use fpk_core::grid::Domain;
use fpk_core::{NetworkSnapshot, PotentialNetwork, TrainingConfig};

use crate::CliResult;

fn broadcast(values: &[f64], n: usize, what: &str) -> CliResult<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        k if k == n => Ok(values.to_vec()),
        k => Err(format!("--{what} has {k} values, expected 1 or {n}").into()),
    }
}

pub fn execute(
    net_path: &Path,
    dx: f64,
    config: Option<&Path>,
    lower: &[f64],
    upper: &[f64],
    out: Option<&Path>,
) -> CliResult {
    let text = fs::read_to_string(net_path).map_err(|e| format!("{}: {e}", net_path.display()))?;
    let snapshot: NetworkSnapshot =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", net_path.display()))?;
    let net = PotentialNetwork::from_snapshot(&snapshot)?;
    let n = net.dim();
    let domain = match config {
        Some(path) => TrainingConfig::load(path)?.domain()?,
        None => {
            if lower.is_empty() || upper.is_empty() {
                return Err("give either --config or both --lower and --upper".into());
            }
            Domain::new(broadcast(lower, n, "lower")?, broadcast(upper, n, "upper")?)?
        }
    };
    if domain.dim() != n {
        return Err(format!("domain has {} axes, network expects {n}", domain.dim()).into());
    }
    let field = SolutionField::on_grid(&net, &domain, &vec![dx; n])?;
    match out {
        Some(path) => field.write_csv(BufWriter::new(File::create(path)?))?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            field.write_csv(&mut lock)?;
            lock.flush()?;
        }
    }
    eprintln!("N0 = {:.10e}", field.n0);
    Ok(())
}
