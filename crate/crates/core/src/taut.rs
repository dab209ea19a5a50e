//! Taut string through a corridor and sup-norm distance to the unit-energy
//! set K (absolutely continuous x with x(0) = 0 and integral of x'^2 <= 1).
//!
//! The minimal-energy path through pointwise interval constraints ("gates")
//! is the taut string: straight wherever the corridor is slack, bending only
//! where it touches a gate endpoint. It is computed with a funnel sweep over
//! the gates — two slope-monotone chains hanging from a committed apex — in
//! O(m) per call. Feasibility of "distance <= eps" then reduces to "taut
//! string of the eps-corridor has energy <= 1", which bisection turns into
//! the distance itself:
//!
//!   dist(p, K) = min_{x in K} sup_t |p(t) - x(t)|
//!
//! Both p and the taut string are piecewise linear on the same breakpoints,
//! so checking the corridor at breakpoints bounds the deviation everywhere.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Pt {
    t: f64,
    v: f64,
}

#[inline]
fn slope(a: Pt, b: Pt) -> f64 {
    (b.v - a.v) / (b.t - a.t)
}

/// Minimal-energy path through gates [lo_i, hi_i] at strictly increasing
/// ts, pinned to `start` at ts[0] (lo/hi are indexed alongside ts; the entry
/// at index 0 is ignored in favor of the pinned start). The right end is
/// free inside the last gate. Returns the path values at every ts.
pub fn taut_string(ts: &[f64], lo: &[f64], hi: &[f64], start: f64) -> Result<Vec<f64>> {
    let m = ts.len();
    if m == 0 || lo.len() != m || hi.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            got: lo.len().min(hi.len()),
        });
    }
    if ts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid(
            "gate positions must be strictly increasing".into(),
        ));
    }
    if (1..m).any(|i| lo[i] > hi[i]) {
        return Err(Error::Invalid("empty gate".into()));
    }
    let apex0 = Pt { t: ts[0], v: start };
    if m == 1 {
        return Ok(vec![start]);
    }

    let mut apex = apex0;
    let mut committed: Vec<Pt> = vec![apex0];
    let mut upper: std::collections::VecDeque<Pt> = Default::default();
    let mut lower: std::collections::VecDeque<Pt> = Default::default();

    for i in 1..m {
        // Ceiling point: commits floor bends it crosses below, then joins the
        // upper chain (slopes strictly increasing from the apex).
        let c = Pt { t: ts[i], v: hi[i] };
        while let Some(&f0) = lower.front() {
            if slope(apex, c) < slope(apex, f0) {
                apex = lower.pop_front().unwrap();
                committed.push(apex);
                upper.clear();
            } else {
                break;
            }
        }
        loop {
            let last = match upper.back() {
                Some(&p) => p,
                None => break,
            };
            let prev = if upper.len() >= 2 {
                upper[upper.len() - 2]
            } else {
                apex
            };
            if slope(last, c) <= slope(prev, last) {
                upper.pop_back();
            } else {
                break;
            }
        }
        upper.push_back(c);

        // Floor point, symmetric (lower chain slopes strictly decreasing).
        let f = Pt { t: ts[i], v: lo[i] };
        while let Some(&u0) = upper.front() {
            if slope(apex, f) > slope(apex, u0) {
                apex = upper.pop_front().unwrap();
                committed.push(apex);
                lower.clear();
            } else {
                break;
            }
        }
        loop {
            let last = match lower.back() {
                Some(&p) => p,
                None => break,
            };
            let prev = if lower.len() >= 2 {
                lower[lower.len() - 2]
            } else {
                apex
            };
            if slope(last, f) >= slope(prev, last) {
                lower.pop_back();
            } else {
                break;
            }
        }
        lower.push_back(f);
    }

    // Free right end: a zero-slope finish is optimal once the funnel allows
    // it. Descend along ceiling contacts while they force a negative slope
    // (or ascend along floor contacts), then go horizontal.
    if upper.front().is_some_and(|&u| slope(apex, u) < 0.0) {
        while let Some(&u) = upper.front() {
            if slope(apex, u) < 0.0 {
                apex = upper.pop_front().unwrap();
                committed.push(apex);
            } else {
                break;
            }
        }
    } else if lower.front().is_some_and(|&f| slope(apex, f) > 0.0) {
        while let Some(&f) = lower.front() {
            if slope(apex, f) > 0.0 {
                apex = lower.pop_front().unwrap();
                committed.push(apex);
            } else {
                break;
            }
        }
    }

    // Evaluate the committed polyline (horizontal after the last bend).
    let mut values = Vec::with_capacity(m);
    let mut seg = 0usize;
    for (i, &t) in ts.iter().enumerate() {
        while seg + 1 < committed.len() && committed[seg + 1].t <= t {
            seg += 1;
        }
        let v = if seg + 1 < committed.len() && t > committed[seg].t {
            let a = committed[seg];
            let b = committed[seg + 1];
            a.v + (b.v - a.v) * (t - a.t) / (b.t - a.t)
        } else {
            committed[seg].v
        };
        // Numerical guard: the exact taut string lies inside the corridor;
        // clamp out float dust so downstream checks see a feasible path.
        let v = if i == 0 { start } else { v.clamp(lo[i], hi[i]) };
        values.push(v);
    }
    Ok(values)
}

/// Energy of a polyline on the given grid.
pub fn polyline_energy(ts: &[f64], vs: &[f64]) -> f64 {
    ts.windows(2)
        .zip(vs.windows(2))
        .map(|(t, v)| {
            let dv = v[1] - v[0];
            dv * dv / (t[1] - t[0])
        })
        .sum()
}

/// Is there a path in K within eps of the breakpoints (pinned x(0) = 0)?
/// Returns the feasibility flag and the minimal-energy witness path.
pub fn corridor_feasible(ts: &[f64], vs: &[f64], eps: f64) -> Result<(bool, Vec<f64>)> {
    let lo: Vec<f64> = vs.iter().map(|v| v - eps).collect();
    let hi: Vec<f64> = vs.iter().map(|v| v + eps).collect();
    let path = taut_string(ts, &lo, &hi, 0.0)?;
    let energy = polyline_energy(ts, &path);
    Ok((energy <= 1.0 + 1e-12, path))
}

/// Sup-norm distance from the polygonal path (ts, vs) to K, within +-tol,
/// with the witness path attaining it (energy <= 1 + 1e-9).
pub fn dist_to_k_with_witness(ts: &[f64], vs: &[f64], tol: f64) -> Result<(f64, Vec<f64>)> {
    if tol <= 0.0 {
        return Err(Error::Invalid("tol must be positive".into()));
    }
    if vs.first().copied() != Some(0.0) {
        return Err(Error::Invalid("path must start at 0".into()));
    }
    if polyline_energy(ts, vs) <= 1.0 {
        return Ok((0.0, vs.to_vec()));
    }
    let mut lo = 0.0f64;
    let mut hi = vs.iter().fold(0.0f64, |a, &v| a.max(v.abs())) + tol;
    let mut witness = vec![0.0; vs.len()]; // the zero path always works at hi
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let (ok, path) = corridor_feasible(ts, vs, mid)?;
        if ok {
            hi = mid;
            witness = path;
        } else {
            lo = mid;
        }
    }
    Ok((0.5 * (lo + hi), witness))
}

/// Sup-norm distance from the path to K, within +-tol.
pub fn dist_to_k(ts: &[f64], vs: &[f64], tol: f64) -> Result<f64> {
    dist_to_k_with_witness(ts, vs, tol).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::rng::{Purpose, Stream};

    #[test]
    fn straight_corridor_gives_straight_string() {
        let ts = [0.0, 0.25, 0.5, 0.75, 1.0];
        let lo = [0.0, -1.0, -1.0, -1.0, -1.0];
        let hi = [0.0, 1.0, 1.0, 1.0, 1.0];
        let path = taut_string(&ts, &lo, &hi, 0.0).unwrap();
        assert!(path.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn string_threads_a_zigzag_corridor() {
        // Narrow alternating gates force bends; the result stays inside.
        let ts = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let lo = [0.0, 0.5, -1.0, 0.5, -1.0, -1.0];
        let hi = [0.0, 1.0, -0.4, 1.0, -0.4, 1.0];
        let path = taut_string(&ts, &lo, &hi, 0.0).unwrap();
        for i in 1..ts.len() {
            assert!(
                path[i] >= lo[i] - 1e-9 && path[i] <= hi[i] + 1e-9,
                "gate {i}: {}",
                path[i]
            );
        }
    }

    #[test]
    fn free_end_prefers_horizontal() {
        let ts = [0.0, 0.5, 1.0];
        let lo = [0.0, 0.8, -5.0];
        let hi = [0.0, 2.0, 5.0];
        let path = taut_string(&ts, &lo, &hi, 0.0).unwrap();
        // Must rise to 0.8 by t = 0.5, then stay flat.
        assert!((path[1] - 0.8).abs() < 1e-12);
        assert!((path[2] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn dist_zero_for_paths_inside_k() {
        let ts = [0.0, 1.0];
        let vs = [0.0, 1.0]; // x(t) = t has energy exactly 1
        assert_eq!(dist_to_k(&ts, &vs, 1e-7).unwrap(), 0.0);
        let zero = [0.0, 0.0];
        assert_eq!(dist_to_k(&ts, &zero, 1e-7).unwrap(), 0.0);
    }

    #[test]
    fn dist_for_double_slope_is_one() {
        // x(t) = 2t: any K-path has x(1) <= 1, and x(t) = t attains sup
        // deviation exactly 1.
        let ts = [0.0, 0.5, 1.0];
        let vs = [0.0, 1.0, 2.0];
        let d = dist_to_k(&ts, &vs, 1e-8).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "distance {d}");
    }

    #[test]
    fn witness_energy_is_admissible() {
        let mut s = Stream::new(99, Purpose::Probe, 0);
        for _ in 0..50 {
            let m = 3 + (s.next_u64() % 4) as usize;
            let ts: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
            let mut vs = vec![0.0];
            for _ in 1..=m {
                vs.push(4.0 * s.next_f64() - 2.0);
            }
            let (_, witness) = dist_to_k_with_witness(&ts, &vs, 1e-6).unwrap();
            assert!(polyline_energy(&ts, &witness) <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn agrees_with_grid_dp_oracle_on_random_paths() {
        let mut s = Stream::new(4242, Purpose::Probe, 0);
        for trial in 0..50 {
            let m = 2 + (s.next_u64() % 5) as usize; // up to 6 breakpoints
            let ts: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
            let mut vs = vec![0.0];
            for _ in 1..=m {
                vs.push(3.0 * s.next_f64() - 1.5);
            }
            let tol = 1e-5;
            let fast = dist_to_k(&ts, &vs, tol).unwrap();
            let brute = oracle::dist_to_k_by_grid_dp(&ts, &vs, 241, tol);
            // The DP oracle discretizes values, so allow its grid resolution
            // on top of the 10x bisection-tolerance budget.
            let slack = 10.0 * tol + 0.02;
            assert!(
                (fast - brute).abs() <= slack,
                "trial {trial}: taut {fast} vs dp {brute} (ts {ts:?} vs {vs:?})"
            );
        }
    }

    #[test]
    fn dist_is_lipschitz_in_sup_norm() {
        let mut s = Stream::new(7, Purpose::Probe, 0);
        for _ in 0..30 {
            let m = 4;
            let ts: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
            let mut p = vec![0.0];
            let mut q = vec![0.0];
            for _ in 1..=m {
                let base = 3.0 * s.next_f64() - 1.5;
                p.push(base);
                q.push(base + 0.4 * (s.next_f64() - 0.5));
            }
            let tol = 1e-6;
            let dp = dist_to_k(&ts, &p, tol).unwrap();
            let dq = dist_to_k(&ts, &q, tol).unwrap();
            let gap = p
                .iter()
                .zip(&q)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!((dp - dq).abs() <= gap + 2.0 * tol);
        }
    }

    #[test]
    fn scaling_grows_distance_beyond_unit_energy() {
        let ts = [0.0, 0.3, 0.6, 1.0];
        let vs = [0.0, 0.9, -0.3, 1.2];
        let tol = 1e-6;
        let mut prev = 0.0;
        for step in 1..=8 {
            let lam = step as f64 * 0.5;
            let scaled: Vec<f64> = vs.iter().map(|v| lam * v).collect();
            let d = dist_to_k(&ts, &scaled, tol).unwrap();
            assert!(d >= prev - 2.0 * tol, "lambda {lam}: {d} < {prev}");
            prev = d;
        }
    }
}
