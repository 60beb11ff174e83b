//! Log-domain Sinkhorn iterations for entropy-regularized transport.

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    /// Row-major `m×n`.
    pub plan: Vec<f64>,
    pub sweeps: usize,
    /// Row marginals within the tolerance (columns are exact after each sweep).
    pub converged: bool,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Alternating dual updates `f_i = ε log a_i − ε LSE_j((g_j − c_ij)/ε)` and the column
/// analogue, stopping once every row marginal is within `tol`.
pub fn solve(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
    epsilon: f64,
    max_sweeps: usize,
    tol: f64,
) -> SinkhornSolution {
    let (m, n) = (supply.len(), demand.len());
    let log_a: Vec<f64> = supply.iter().map(|a| a.ln()).collect();
    let log_b: Vec<f64> = demand.iter().map(|b| b.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut sweeps = 0;
    let mut error = f64::INFINITY;

    let plan_entry = |f: &[f64], g: &[f64], i: usize, j: usize| {
        if f[i] == f64::NEG_INFINITY {
            0.0
        } else {
            ((f[i] + g[j] - cost[i * n + j]) / epsilon).exp()
        }
    };

    while sweeps < max_sweeps {
        sweeps += 1;
        for i in 0..m {
            f[i] = if supply[i] > 0.0 {
                let row = &cost[i * n..(i + 1) * n];
                epsilon * log_a[i]
                    - epsilon * log_sum_exp((0..n).map(|j| (g[j] - row[j]) / epsilon))
            } else {
                f64::NEG_INFINITY
            };
        }
        for j in 0..n {
            g[j] = epsilon * log_b[j]
                - epsilon
                    * log_sum_exp(
                        (0..m)
                            .filter(|&i| f[i] > f64::NEG_INFINITY)
                            .map(|i| (f[i] - cost[i * n + j]) / epsilon),
                    );
        }
        error = (0..m)
            .map(|i| {
                let row: f64 = (0..n).map(|j| plan_entry(&f, &g, i, j)).sum();
                (row - supply[i]).abs()
            })
            .fold(0.0, f64::max);
        if error <= tol {
            break;
        }
    }

    let mut plan = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            plan[i * n + j] = plan_entry(&f, &g, i, j);
        }
    }
    SinkhornSolution {
        plan,
        sweeps,
        converged: error <= tol,
    }
}
