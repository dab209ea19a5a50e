//! Exact solver for the balanced transportation problem.
//!
//! Classic transportation simplex (MODI / u-v method) on the bipartite
//! supply/demand graph: northwest-corner start, tree-structured basis,
//! potential updates by traversal, most-negative entering rule with a Bland
//! fallback against cycling. Sizes here are small (supports up to ~10^3), so
//! the dense cost scan per pivot is fine.

use crate::error::{Error, Result};

/// Minimal total cost sum x_ij c_ij over couplings with row marginals
/// `supply` and column marginals `demand` (equal totals).
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> Result<f64> {
    let plan = transport_plan(supply, demand, cost)?;
    let mut total = 0.0;
    for &(i, j, x) in &plan {
        total += x * cost[i][j];
    }
    Ok(total)
}

/// Optimal coupling as a sparse list of (row, col, mass) entries.
pub fn transport_plan(
    supply: &[f64],
    demand: &[f64],
    cost: &[Vec<f64>],
) -> Result<Vec<(usize, usize, f64)>> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Err(Error::Invalid("empty marginals".into()));
    }
    if cost.len() != m || cost.iter().any(|r| r.len() != n) {
        return Err(Error::LengthMismatch {
            expected: m * n,
            got: cost.iter().map(|r| r.len()).sum(),
        });
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 * total_s.abs().max(1.0) {
        return Err(Error::Invalid(format!(
            "unbalanced problem: supply {total_s}, demand {total_d}"
        )));
    }

    let mut solver = Simplex::new(supply.to_vec(), demand.to_vec(), cost);
    solver.run()?;
    Ok(solver
        .basis
        .iter()
        .map(|cell| (cell.row, cell.col, cell.flow))
        .filter(|&(_, _, x)| x > 0.0)
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    row: usize,
    col: usize,
    flow: f64,
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [Vec<f64>],
    basis: Vec<Cell>,
}

impl<'a> Simplex<'a> {
    fn new(mut supply: Vec<f64>, mut demand: Vec<f64>, cost: &'a [Vec<f64>]) -> Self {
        let m = supply.len();
        let n = demand.len();
        // Northwest corner initial basis: exactly m + n - 1 cells, advancing
        // one index per step so degenerate (zero-flow) cells stay basic.
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]).max(0.0);
            basis.push(Cell { row: i, col: j, flow: x });
            supply[i] -= x;
            demand[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if (supply[i] <= demand[j] && i < m - 1) || j == n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Simplex { m, n, cost, basis }
    }

    /// Node ids: rows are 0..m, columns are m..m+n.
    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (e, cell) in self.basis.iter().enumerate() {
            adj[cell.row].push((self.m + cell.col, e));
            adj[self.m + cell.col].push((cell.row, e));
        }
        adj
    }

    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut u = vec![f64::NAN; self.m];
        let mut v = vec![f64::NAN; self.n];
        u[0] = 0.0;
        let mut stack = vec![0usize];
        let mut seen = vec![false; self.m + self.n];
        seen[0] = true;
        while let Some(node) = stack.pop() {
            for &(next, e) in &adj[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let cell = self.basis[e];
                if next >= self.m {
                    v[next - self.m] = self.cost[cell.row][cell.col] - u[cell.row];
                } else {
                    u[next] = self.cost[cell.row][cell.col] - v[cell.col];
                }
                stack.push(next);
            }
        }
        (u, v)
    }

    /// Cycle created by the entering cell: path in the basis tree from the
    /// entering column node back to the entering row node.
    fn cycle_edges(&self, row: usize, col: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let start = self.m + col;
        let goal = row;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &(next, e) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, e));
                    queue.push_back(next);
                }
            }
        }
        let mut edges = Vec::new();
        let mut node = goal;
        while let Some((prev, e)) = parent[node] {
            edges.push(e);
            node = prev;
        }
        edges.reverse(); // ordered from the column node toward the row node
        edges
    }

    fn run(&mut self) -> Result<()> {
        let scale: f64 = self
            .cost
            .iter()
            .flat_map(|r| r.iter())
            .fold(1.0f64, |a, &c| a.max(c.abs()));
        let tol = 1e-12 * scale;
        let max_iters = 200 * (self.m + self.n).max(8);
        for iter in 0..max_iters {
            let (u, v) = self.potentials();
            // Entering cell: most negative reduced cost; Bland (first
            // negative) after a long stall, which guarantees termination.
            let bland = iter > max_iters / 2;
            let mut entering: Option<(usize, usize, f64)> = None;
            'scan: for i in 0..self.m {
                for j in 0..self.n {
                    let r = self.cost[i][j] - u[i] - v[j];
                    if r < -tol {
                        match entering {
                            Some((_, _, best)) if r >= best && !bland => {}
                            _ => entering = Some((i, j, r)),
                        }
                        if bland {
                            break 'scan;
                        }
                    }
                }
            }
            let Some((row, col, _)) = entering else {
                return Ok(());
            };
            let cycle = self.cycle_edges(row, col);
            // Signs along the cycle: +theta on the entering cell, then
            // alternating starting with - on the first path edge.
            let mut theta = f64::INFINITY;
            let mut leaving = usize::MAX;
            for (pos, &e) in cycle.iter().enumerate() {
                if pos % 2 == 0 {
                    let f = self.basis[e].flow;
                    if f < theta {
                        theta = f;
                        leaving = e;
                    }
                }
            }
            let theta = theta.max(0.0);
            for (pos, &e) in cycle.iter().enumerate() {
                if pos % 2 == 0 {
                    self.basis[e].flow -= theta;
                } else {
                    self.basis[e].flow += theta;
                }
            }
            self.basis[leaving] = Cell { row, col, flow: theta };
        }
        Err(Error::Estimation(
            "transportation simplex failed to converge".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::rng::{Purpose, Stream};

    #[test]
    fn point_masses() {
        let c = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let d = transport_cost(&[1.0, 0.0], &[0.0, 1.0], &c).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_point_free_parameter() {
        // (0.9, 0.1) vs (0.2, 0.8) on two points at distance 1: net flow 0.7.
        let c = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let d = transport_cost(&[0.9, 0.1], &[0.2, 0.8], &c).unwrap();
        assert!((d - 0.7).abs() < 1e-12);
    }

    #[test]
    fn equal_measures_cost_zero() {
        let c = vec![vec![0.0, 2.0], vec![2.0, 0.0]];
        let d = transport_cost(&[0.3, 0.7], &[0.3, 0.7], &c).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn matches_vertex_enumeration_on_random_instances() {
        let mut s = Stream::new(2024, Purpose::Probe, 0);
        for trial in 0..200 {
            let k = 2 + (s.next_u64() % 3) as usize; // 2..=4 support points
            let mut a: Vec<f64> = (0..k).map(|_| s.next_f64() + 0.05).collect();
            let mut b: Vec<f64> = (0..k).map(|_| s.next_f64() + 0.05).collect();
            let asum: f64 = a.iter().sum();
            let bsum: f64 = b.iter().sum();
            a.iter_mut().for_each(|x| *x /= asum);
            b.iter_mut().for_each(|x| *x /= bsum);
            // Metric cost from random points on a line.
            let pts: Vec<f64> = (0..k).map(|_| 10.0 * s.next_f64()).collect();
            let cost: Vec<Vec<f64>> = pts
                .iter()
                .map(|x| pts.iter().map(|y| (x - y).abs()).collect())
                .collect();
            let fast = transport_cost(&a, &b, &cost).unwrap();
            let brute = oracle::transport_cost_by_vertex_enumeration(&a, &b, &cost);
            assert!(
                (fast - brute).abs() <= 1e-9,
                "trial {trial}: simplex {fast} vs oracle {brute}"
            );
        }
    }

    #[test]
    fn plan_has_correct_marginals() {
        let c = vec![
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0],
            vec![2.0, 1.0, 0.0],
        ];
        let a = [0.2, 0.5, 0.3];
        let b = [0.4, 0.4, 0.2];
        let plan = transport_plan(&a, &b, &c).unwrap();
        let mut row = [0.0; 3];
        let mut col = [0.0; 3];
        for (i, j, x) in plan {
            assert!(x >= 0.0);
            row[i] += x;
            col[j] += x;
        }
        for i in 0..3 {
            assert!((row[i] - a[i]).abs() < 1e-12);
            assert!((col[i] - b[i]).abs() < 1e-12);
        }
    }
}
