//! Small numeric helpers: reproducible reductions and grids.

/// Ordered pairwise summation. Deterministic for a fixed input order and more
/// accurate than a left fold; all ensemble reductions in the crate go through
/// this after collecting per-replica results in replica order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample standard error of the mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let m = mean(xs);
    let devs: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&devs) / (n as f64 - 1.0);
    (var / n as f64).sqrt()
}

/// log log n, the LIL normalizer ingredient. Requires n > e.
pub fn log_log(x: f64) -> f64 {
    x.ln().ln()
}

/// Geometric integer grid: start, ceil(start*ratio), ... capped at max,
/// strictly increasing, always containing max.
pub fn geometric_grid(start: usize, ratio: f64, max: usize) -> Vec<usize> {
    assert!(ratio > 1.0 && start >= 1);
    let mut grid = Vec::new();
    let mut x = start as f64;
    let mut last = 0usize;
    while (x as usize) < max {
        let n = (x.ceil() as usize).max(last + 1);
        if n >= max {
            break;
        }
        grid.push(n);
        last = n;
        x *= ratio;
    }
    if grid.last() != Some(&max) {
        grid.push(max);
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }

    #[test]
    fn grid_is_increasing_and_capped() {
        let g = geometric_grid(16, 1.5, 10_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*g.last().unwrap(), 10_000);
        assert_eq!(g[0], 16);
    }
}
