//! Transportation simplex (MODI pricing on a spanning-tree basis).
//!
//! The basis is a spanning tree of the bipartite row/column graph with `m + n − 1`
//! cells (zero-flow cells allowed). Entering cells are chosen by most negative reduced
//! cost with lowest-index tie-breaking; after a run of degenerate pivots the rule falls
//! back to Bland's (first negative reduced cost, lowest-index leaving cell) until a
//! pivot makes progress, which rules out cycling.

use std::collections::VecDeque;

/// Consecutive zero-length pivots before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 32;

#[derive(Debug, Clone)]
pub struct SimplexSolution {
    /// Row-major `m×n` flows.
    pub flow: Vec<f64>,
    pub row_potential: Vec<f64>,
    pub col_potential: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimplexError {
    PivotLimit(usize),
}

struct Tree {
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    /// node -> indices into `cells`; rows are nodes 0..m, columns m..m+n
    adj: Vec<Vec<usize>>,
    basic: Vec<bool>,
}

impl Tree {
    fn node_of_col(&self, j: usize) -> usize {
        self.m + j
    }

    fn other(&self, cell: usize, node: usize) -> usize {
        let (i, j) = self.cells[cell];
        if node == i {
            self.m + j
        } else {
            i
        }
    }

    fn potentials(&self, cost: &[f64], u: &mut [f64], v: &mut [f64]) {
        let (m, n) = (self.m, self.n);
        let mut seen = vec![false; m + n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        u[0] = 0.0;
        while let Some(node) = queue.pop_front() {
            for &c in &self.adj[node] {
                let (i, j) = self.cells[c];
                let next = self.other(c, node);
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                if next >= m {
                    v[j] = cost[i * n + j] - u[i];
                } else {
                    u[i] = cost[i * n + j] - v[j];
                }
                queue.push_back(next);
            }
        }
    }

    /// Cells on the tree path from row `i` to column `j`, ordered from the column end.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let total = self.m + self.n;
        let mut parent_cell = vec![usize::MAX; total];
        let mut seen = vec![false; total];
        let target = self.node_of_col(j);
        let mut queue = VecDeque::from([i]);
        seen[i] = true;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &c in &self.adj[node] {
                let next = self.other(c, node);
                if !seen[next] {
                    seen[next] = true;
                    parent_cell[next] = c;
                    queue.push_back(next);
                }
            }
        }
        let mut out = Vec::new();
        let mut node = target;
        while node != i {
            let c = parent_cell[node];
            out.push(c);
            node = self.other(c, node);
        }
        out
    }

    /// Recomputes flows on the current basis directly from the marginals.
    fn resolve_flows(&mut self, supply: &[f64], demand: &[f64]) {
        let (m, n) = (self.m, self.n);
        debug_assert_eq!((supply.len(), demand.len()), (m, n));
        let mut residual: Vec<f64> = supply.iter().chain(demand).copied().collect();
        let mut degree: Vec<usize> = self.adj.iter().map(Vec::len).collect();
        let mut done = vec![false; self.cells.len()];
        let mut leaves: VecDeque<usize> = (0..m + n).filter(|&v| degree[v] == 1).collect();
        while let Some(node) = leaves.pop_front() {
            if degree[node] != 1 {
                continue;
            }
            let Some(&c) = self.adj[node].iter().find(|&&c| !done[c]) else {
                continue;
            };
            let amount = residual[node];
            self.flow[c] = amount;
            done[c] = true;
            let other = self.other(c, node);
            residual[node] = 0.0;
            residual[other] -= amount;
            degree[node] -= 1;
            degree[other] -= 1;
            if degree[other] == 1 {
                leaves.push_back(other);
            }
        }
    }
}

/// Solves `min Σ c_ij t_ij` s.t. row sums = `supply`, column sums = `demand`, `t ≥ 0`.
/// `cost` is row-major `m×n`; totals of supply and demand must agree.
pub fn solve(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
    max_pivots: usize,
) -> Result<SimplexSolution, SimplexError> {
    let (m, n) = (supply.len(), demand.len());
    debug_assert_eq!(cost.len(), m * n);

    // northwest corner start
    let mut cells = Vec::with_capacity(m + n - 1);
    let mut flow = Vec::with_capacity(m + n - 1);
    let (mut s, mut d) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]).max(0.0);
        cells.push((i, j));
        flow.push(x);
        s[i] -= x;
        d[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if (s[i] <= d[j] && i < m - 1) || j == n - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    let mut adj = vec![Vec::new(); m + n];
    let mut basic = vec![false; m * n];
    for (c, &(i, j)) in cells.iter().enumerate() {
        adj[i].push(c);
        adj[m + j].push(c);
        basic[i * n + j] = true;
    }
    let mut tree = Tree {
        m,
        n,
        cells,
        flow,
        adj,
        basic,
    };

    let scale = cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()));
    let tol = 1e-12 * scale;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut pivots = 0;
    let mut degenerate_run = 0;
    loop {
        tree.potentials(cost, &mut u, &mut v);
        let bland = degenerate_run >= DEGENERATE_STREAK;
        let mut entering: Option<(usize, f64)> = None;
        'scan: for i in 0..m {
            let row = &cost[i * n..(i + 1) * n];
            for j in 0..n {
                if tree.basic[i * n + j] {
                    continue;
                }
                let rc = row[j] - u[i] - v[j];
                if rc < -tol && entering.map_or(true, |(_, best)| rc < best) {
                    entering = Some((i * n + j, rc));
                    if bland {
                        break 'scan;
                    }
                }
            }
        }
        let Some((cell_idx, _)) = entering else {
            break;
        };
        if pivots >= max_pivots {
            return Err(SimplexError::PivotLimit(pivots));
        }
        let (ei, ej) = (cell_idx / n, cell_idx % n);
        let path = tree.path(ei, ej);
        // path[0] touches column ej and loses flow; signs alternate from there
        let mut leave: Option<(usize, f64)> = None;
        for &c in path.iter().step_by(2) {
            let x = tree.flow[c];
            let (ci, cj) = tree.cells[c];
            let better = match leave {
                None => true,
                Some((lc, lx)) => {
                    let (li, lj) = tree.cells[lc];
                    x < lx || (x == lx && ci * n + cj < li * n + lj)
                }
            };
            if better {
                leave = Some((c, x));
            }
        }
        let (leave_cell, theta) = leave.expect("cycle has a decreasing cell");
        let theta = theta.max(0.0);
        for (k, &c) in path.iter().enumerate() {
            if k % 2 == 0 {
                tree.flow[c] -= theta;
            } else {
                tree.flow[c] += theta;
            }
        }
        // replace the leaving cell in place
        let (li, lj) = tree.cells[leave_cell];
        tree.basic[li * n + lj] = false;
        tree.adj[li].retain(|&c| c != leave_cell);
        tree.adj[m + lj].retain(|&c| c != leave_cell);
        tree.cells[leave_cell] = (ei, ej);
        tree.flow[leave_cell] = theta;
        tree.basic[ei * n + ej] = true;
        tree.adj[ei].push(leave_cell);
        tree.adj[m + ej].push(leave_cell);

        pivots += 1;
        if theta > 0.0 {
            degenerate_run = 0;
        } else {
            degenerate_run += 1;
        }
    }

    tree.resolve_flows(supply, demand);
    let mut dense = vec![0.0; m * n];
    for (c, &(i, j)) in tree.cells.iter().enumerate() {
        dense[i * n + j] = tree.flow[c].max(0.0);
    }
    Ok(SimplexSolution {
        flow: dense,
        row_potential: u,
        col_potential: v,
        pivots,
    })
}
