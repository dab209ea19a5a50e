//! Independent reference implementations used by the test suites.
//!
//! Everything here deliberately avoids the production code paths it is used
//! to check: transport by exhaustive vertex enumeration instead of the
//! simplex, corridor distance by dynamic programming over a value grid
//! instead of the taut string, and closed-form Gaussian moments.

/// Exact transportation cost by enumerating all basis trees (vertices of the
/// transportation polytope). Exponential; supports of size <= 4 only.
pub fn transport_cost_by_vertex_enumeration(
    supply: &[f64],
    demand: &[f64],
    cost: &[Vec<f64>],
) -> f64 {
    let m = supply.len();
    let n = demand.len();
    assert!(m <= 4 && n <= 4, "oracle is exponential; keep supports small");
    let cells: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .collect();
    let basis_size = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = vec![0usize; basis_size];
    enumerate_subsets(&cells, basis_size, 0, 0, &mut chosen, &mut |subset| {
        if let Some(flows) = solve_tree_flows(m, n, supply, demand, subset) {
            if flows.iter().all(|&x| x >= -1e-12) {
                let c: f64 = subset
                    .iter()
                    .zip(&flows)
                    .map(|(&(i, j), &x)| x.max(0.0) * cost[i][j])
                    .sum();
                if c < best {
                    best = c;
                }
            }
        }
    });
    best
}

fn enumerate_subsets(
    cells: &[(usize, usize)],
    size: usize,
    start: usize,
    depth: usize,
    chosen: &mut Vec<usize>,
    visit: &mut impl FnMut(&[(usize, usize)]),
) {
    if depth == size {
        let subset: Vec<(usize, usize)> = chosen.iter().map(|&k| cells[k]).collect();
        visit(&subset);
        return;
    }
    for k in start..cells.len() {
        chosen[depth] = k;
        enumerate_subsets(cells, size, k + 1, depth + 1, chosen, visit);
    }
}

/// Solve for the unique flows on a candidate spanning tree by leaf
/// stripping; None if the edge set is not a tree on all nodes.
fn solve_tree_flows(
    m: usize,
    n: usize,
    supply: &[f64],
    demand: &[f64],
    edges: &[(usize, usize)],
) -> Option<Vec<f64>> {
    let nodes = m + n;
    let mut degree = vec![0usize; nodes];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (e, &(i, j)) in edges.iter().enumerate() {
        degree[i] += 1;
        degree[m + j] += 1;
        incident[i].push(e);
        incident[m + j].push(e);
    }
    if degree.iter().any(|&d| d == 0) {
        return None;
    }
    let mut balance: Vec<f64> = supply
        .iter()
        .copied()
        .chain(demand.iter().copied())
        .collect();
    let mut removed_edge = vec![false; edges.len()];
    let mut removed_node = vec![false; nodes];
    let mut flows = vec![0.0; edges.len()];
    for _ in 0..edges.len() {
        let leaf = (0..nodes).find(|&v| !removed_node[v] && {
            incident[v].iter().filter(|&&e| !removed_edge[e]).count() == 1
        })?;
        let e = *incident[leaf]
            .iter()
            .find(|&&e| !removed_edge[e])
            .expect("leaf has one live edge");
        let (i, j) = edges[e];
        let other = if leaf == i { m + j } else { i };
        flows[e] = balance[leaf];
        balance[other] -= balance[leaf];
        balance[leaf] = 0.0;
        removed_edge[e] = true;
        removed_node[leaf] = true;
    }
    Some(flows)
}

/// Distance in sup norm from a polygonal path to the unit-energy set, by
/// bisection with a dynamic-programming feasibility test over a discretized
/// value grid. Independent of the taut-string construction.
///
/// `ts`/`vs`: breakpoints and values (vs[0] = 0). `levels`: grid resolution.
pub fn dist_to_k_by_grid_dp(ts: &[f64], vs: &[f64], levels: usize, tol: f64) -> f64 {
    let vmax = vs.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let (mut lo, mut hi) = (0.0, vmax + 1e-9);
    if corridor_min_energy_dp(ts, vs, hi, levels) > 1.0 {
        // Even the zero-path corridor infeasible at grid resolution; widen.
        hi = 2.0 * vmax + 1.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if corridor_min_energy_dp(ts, vs, mid, levels) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimal energy of a grid path x with x(0) = 0 and |x(t_i) - v_i| <= eps,
/// over `levels` equally spaced values per corridor interval.
fn corridor_min_energy_dp(ts: &[f64], vs: &[f64], eps: f64, levels: usize) -> f64 {
    let m = ts.len();
    let grid = |i: usize| -> Vec<f64> {
        (0..levels)
            .map(|g| vs[i] - eps + 2.0 * eps * g as f64 / (levels - 1) as f64)
            .collect()
    };
    // cost[g] = minimal energy to reach value grid_i[g] at t_i.
    let mut cost = vec![f64::INFINITY; levels];
    let first = grid(1);
    let dt = ts[1] - ts[0];
    for (g, &v) in first.iter().enumerate() {
        cost[g] = v * v / dt;
    }
    let mut prev_grid = first;
    for i in 2..m {
        let cur = grid(i);
        let dt = ts[i] - ts[i - 1];
        let mut next = vec![f64::INFINITY; levels];
        for (g, &v) in cur.iter().enumerate() {
            for (h, &u) in prev_grid.iter().enumerate() {
                let c = cost[h] + (v - u) * (v - u) / dt;
                if c < next[g] {
                    next[g] = c;
                }
            }
        }
        cost = next;
        prev_grid = cur;
    }
    cost.into_iter().fold(f64::INFINITY, f64::min)
}

/// E[|Z| 1_{|Z| >= a}] for standard normal Z: 2 phi(a).
pub fn gaussian_tail_abs_moment(a: f64) -> f64 {
    2.0 * crate::rng::normal_pdf(a)
}

/// E|X|^3 for X ~ N(0, variance).
pub fn gaussian_abs_third_moment(variance: f64) -> f64 {
    2.0 * (2.0 / std::f64::consts::PI).sqrt() * variance.powf(1.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_enumeration_on_hand_case() {
        // Two points at distance 1; net mass moved is 0.7.
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let d = transport_cost_by_vertex_enumeration(&[0.9, 0.1], &[0.2, 0.8], &cost);
        assert!((d - 0.7).abs() < 1e-12);
    }

    #[test]
    fn dp_distance_for_double_slope_path() {
        // x(t) = 2t has distance 1 from the unit-energy set.
        let ts = [0.0, 0.5, 1.0];
        let vs = [0.0, 1.0, 2.0];
        let d = dist_to_k_by_grid_dp(&ts, &vs, 101, 1e-4);
        assert!((d - 1.0).abs() < 2e-2, "dp distance {d}");
    }

    #[test]
    fn gaussian_moment_formulas() {
        assert!((gaussian_abs_third_moment(1.0) - 1.5957691216057308).abs() < 1e-12);
        assert!((gaussian_tail_abs_moment(0.0) - (2.0 / std::f64::consts::PI).sqrt() * 1.0).abs() < 1e-12);
    }
}
