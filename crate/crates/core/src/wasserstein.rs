//! Wasserstein-1 distances and spectral-gap certification.
//!
//! Distances are exact: a transportation solve over finite supports, and the
//! order-statistics formula for one-dimensional empirical measures.
//! `certify_contraction` turns per-horizon distance decay into a certificate
//! (c, gamma, n0, gamma0) witnessing d(mu P^n, nu P^n) <= c gamma^n d(mu, nu)
//! on the audited pairs.

use crate::error::{Error, RatioDiagnostics, Result};
use crate::kernel::{KernelKind, TransitionKernel};
use crate::rng::{Purpose, Stream};
use crate::space::State;
use crate::transport::transport_cost;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const WEIGHT_TOL: f64 = 1e-12;
/// Fitted gamma at or above 1 - this margin means no certified gap.
const GAP_TOL: f64 = 1e-6;

/// A probability measure on an indexed finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMeasure {
    pub weights: Vec<f64>,
}

impl FiniteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invalid("empty measure".into()));
        }
        if weights.iter().any(|&w| w < -WEIGHT_TOL) {
            return Err(Error::Invalid("negative weight".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::Invalid(format!("weights sum to {sum}")));
        }
        Ok(FiniteMeasure {
            weights: weights.iter().map(|w| w.max(0.0)).collect(),
        })
    }

    pub fn dirac(index: usize, size: usize) -> Result<Self> {
        if index >= size {
            return Err(Error::Invalid(format!("dirac index {index} >= {size}")));
        }
        let mut w = vec![0.0; size];
        w[index] = 1.0;
        FiniteMeasure::new(w)
    }

    pub fn expectation(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.weights.len(),
                got: f.len(),
            });
        }
        Ok(self.weights.iter().zip(f).map(|(w, v)| w * v).sum())
    }
}

/// Merge duplicate support points of a weighted scalar sample into a
/// (support, weights) pair sorted by position.
pub fn merge_support(points: &[f64], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    let mut support = Vec::new();
    let mut merged = Vec::new();
    for idx in order {
        if support.last().is_some_and(|&last: &f64| last == points[idx]) {
            *merged.last_mut().unwrap() += weights[idx];
        } else {
            support.push(points[idx]);
            merged.push(weights[idx]);
        }
    }
    (support, merged)
}

/// Validate a cost matrix as a metric on the joint support: symmetry, zero
/// diagonal, nonnegativity and the triangle inequality on audit triples
/// (all triples up to 40 points, a pseudo-random sample beyond).
pub fn validate_cost_metric(cost: &[Vec<f64>]) -> Result<()> {
    let k = cost.len();
    if cost.iter().any(|r| r.len() != k) {
        return Err(Error::NonMetricCost("cost matrix is not square".into()));
    }
    for i in 0..k {
        if cost[i][i].abs() > 1e-12 {
            return Err(Error::NonMetricCost(format!("nonzero diagonal at {i}")));
        }
        for j in 0..k {
            if cost[i][j] < 0.0 {
                return Err(Error::NonMetricCost(format!("negative cost ({i},{j})")));
            }
            if (cost[i][j] - cost[j][i]).abs() > 1e-12 {
                return Err(Error::NonMetricCost(format!("asymmetry at ({i},{j})")));
            }
        }
    }
    let check = |i: usize, j: usize, l: usize| -> Result<()> {
        if cost[i][j] > cost[i][l] + cost[l][j] + 1e-12 {
            return Err(Error::NonMetricCost(format!(
                "triangle violation on ({i},{j},{l})"
            )));
        }
        Ok(())
    };
    if k <= 40 {
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    check(i, j, l)?;
                }
            }
        }
    } else {
        let mut s = Stream::new(0xA0D1_7, Purpose::Probe, 0);
        for _ in 0..20_000 {
            let i = s.next_u64() as usize % k;
            let j = s.next_u64() as usize % k;
            let l = s.next_u64() as usize % k;
            check(i, j, l)?;
        }
    }
    Ok(())
}

/// Exact W1 between measures on a shared finite support under a metric cost.
pub fn w1_finite(mu: &FiniteMeasure, nu: &FiniteMeasure, cost: &[Vec<f64>]) -> Result<f64> {
    if mu.weights.len() != nu.weights.len() {
        return Err(Error::LengthMismatch {
            expected: mu.weights.len(),
            got: nu.weights.len(),
        });
    }
    if cost.len() != mu.weights.len() {
        return Err(Error::LengthMismatch {
            expected: mu.weights.len(),
            got: cost.len(),
        });
    }
    validate_cost_metric(cost)?;
    transport_cost(&mu.weights, &nu.weights, cost)
}

/// W1 between two equal-size scalar samples: the mean absolute difference of
/// order statistics (quantile coupling). Inputs need not be pre-sorted.
pub fn w1_empirical_1d(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(Error::Invalid("empty samples".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / xs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Empirical,
}

/// One audited horizon: worst normalized distance against the fitted bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioRow {
    pub n: u32,
    /// max over start pairs of d(delta_x P^n, delta_y P^n) / d(delta_x, delta_y)
    pub lhs: f64,
    /// c * gamma^n
    pub bound: f64,
}

/// Witness for the contraction hypothesis: d(mu P^n, nu P^n) <= c gamma^n
/// d(mu, nu) on audited pairs, with n0 the smallest integer >= 2 making
/// gamma0 = c^2 gamma^{n0} < 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub c: f64,
    pub gamma: f64,
    pub n0: u32,
    pub gamma0: f64,
    pub provenance: Provenance,
    pub ratios: Vec<RatioRow>,
}

/// Smallest n0 >= 2 with c^2 gamma^{n0} < 1, and the attained gamma0.
pub fn compute_n0(c: f64, gamma: f64) -> Result<(u32, f64)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Invalid(format!("gamma {gamma} must be in (0,1)")));
    }
    if !(c > 0.0) {
        return Err(Error::Invalid(format!("c {c} must be positive")));
    }
    let c2 = c * c;
    let mut n0 = 2u32;
    loop {
        let g0 = c2 * gamma.powi(n0 as i32);
        if g0 < 1.0 {
            return Ok((n0, g0));
        }
        n0 += 1;
    }
}

/// Certify the contraction hypothesis from per-horizon distances.
///
/// Finite kernels get exact distances (matrix powers + transportation solve);
/// samplable kernels get synchronously coupled replica ensembles compared by
/// the 1-d empirical distance. gamma is fitted as the max per-step decay
/// ratio over consecutive audited horizons, then c as the smallest constant
/// making the bound hold on every audited horizon.
pub fn certify_contraction(
    kernel: &TransitionKernel,
    start_pairs: &[(State, State)],
    horizons: &[u32],
    replicas: usize,
    seed: u64,
) -> Result<ContractionCertificate> {
    if horizons.is_empty() {
        return Err(Error::Invalid("horizons must be nonempty".into()));
    }
    let mut horizons = horizons.to_vec();
    horizons.sort_unstable();
    horizons.dedup();
    if horizons[0] == 0 {
        return Err(Error::Invalid("horizons must be >= 1".into()));
    }
    let mut pairs = Vec::new();
    for (x, y) in start_pairs {
        let d0 = kernel.space.rho(x, y)?;
        if d0 > 0.0 {
            pairs.push((*x, *y, d0));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Invalid(
            "need at least one start pair at positive distance".into(),
        ));
    }

    let (normalized, provenance) = match &kernel.kind {
        KernelKind::Finite(_) => (exact_decay(kernel, &pairs, &horizons)?, Provenance::Exact),
        _ => (
            coupled_decay(kernel, &pairs, &horizons, replicas, seed)?,
            Provenance::Empirical,
        ),
    };

    // normalized[p][h] = d_h / d_0 for pair p at horizons[h].
    let mut gamma: f64 = 0.0;
    let mut any_ratio = false;
    for row in &normalized {
        for w in 0..horizons.len() {
            let (n2, r2) = (horizons[w], row[w]);
            let (n1, r1) = if w == 0 { (0, 1.0) } else { (horizons[w - 1], row[w - 1]) };
            if r1 > 1e-9 && r2 > 0.0 {
                let step = (r2 / r1).powf(1.0 / (n2 - n1) as f64);
                gamma = gamma.max(step);
                any_ratio = true;
            }
        }
    }
    let per_horizon_worst: Vec<f64> = (0..horizons.len())
        .map(|w| normalized.iter().map(|row| row[w]).fold(0.0, f64::max))
        .collect();
    if !any_ratio {
        // All audited distances collapse immediately; any gamma certifies.
        gamma = GAP_TOL;
    }
    if gamma >= 1.0 - GAP_TOL {
        return Err(Error::NoGapCertified {
            diagnostics: RatioDiagnostics {
                ratios: horizons
                    .iter()
                    .copied()
                    .zip(per_horizon_worst.iter().copied())
                    .collect(),
                fitted_gamma: gamma,
            },
        });
    }
    let mut c: f64 = 0.0;
    for (w, &n) in horizons.iter().enumerate() {
        c = c.max(per_horizon_worst[w] / gamma.powi(n as i32));
    }
    let c = c.max(1e-12);
    let (n0, gamma0) = compute_n0(c, gamma)?;
    let ratios = horizons
        .iter()
        .enumerate()
        .map(|(w, &n)| RatioRow {
            n,
            lhs: per_horizon_worst[w],
            bound: c * gamma.powi(n as i32),
        })
        .collect();
    Ok(ContractionCertificate {
        c,
        gamma,
        n0,
        gamma0,
        provenance,
        ratios,
    })
}

fn exact_decay(
    kernel: &TransitionKernel,
    pairs: &[(State, State, f64)],
    horizons: &[u32],
) -> Result<Vec<Vec<f64>>> {
    let fk = kernel.as_finite().expect("exact route requires finite kernel");
    let metric = kernel.space.metric_matrix()?;
    let max_h = *horizons.last().unwrap();
    let mut out = Vec::with_capacity(pairs.len());
    for (x, y, d0) in pairs {
        let mut mu = FiniteMeasure::dirac(x.as_index()?, fk.size())?.weights;
        let mut nu = FiniteMeasure::dirac(y.as_index()?, fk.size())?.weights;
        let mut row = Vec::with_capacity(horizons.len());
        let mut h = 0u32;
        for &target in horizons {
            while h < target {
                mu = fk.evolve(&mu)?;
                nu = fk.evolve(&nu)?;
                h += 1;
            }
            let d = w1_finite(
                &FiniteMeasure::new(normalize(&mu))?,
                &FiniteMeasure::new(normalize(&nu))?,
                &metric,
            )?;
            row.push(d / d0);
        }
        let _ = max_h;
        out.push(row);
    }
    Ok(out)
}

fn normalize(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn coupled_decay(
    kernel: &TransitionKernel,
    pairs: &[(State, State, f64)],
    horizons: &[u32],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if replicas < 2 {
        return Err(Error::Invalid("empirical certification needs >= 2 replicas".into()));
    }
    let max_h = *horizons.last().unwrap();
    let mut out = Vec::with_capacity(pairs.len());
    for (pair_idx, (x0, y0, d0)) in pairs.iter().enumerate() {
        // Per replica: run the coupled pair to the last horizon, recording
        // both states at each audited horizon.
        let per_replica: Vec<Vec<(f64, f64)>> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let mut stream =
                    Stream::new(seed, Purpose::Certification, r as u64).substream(pair_idx as u64);
                let mut x = *x0;
                let mut y = *y0;
                let mut rec = Vec::with_capacity(horizons.len());
                let mut hseen = 0usize;
                for h in 1..=max_h {
                    let (nx, ny) = kernel.step_coupled(&x, &y, &mut stream)?;
                    x = nx;
                    y = ny;
                    if hseen < horizons.len() && horizons[hseen] == h {
                        rec.push((x.value(), y.value()));
                        hseen += 1;
                    }
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut row = Vec::with_capacity(horizons.len());
        for w in 0..horizons.len() {
            let xs: Vec<f64> = per_replica.iter().map(|rec| rec[w].0).collect();
            let ys: Vec<f64> = per_replica.iter().map(|rec| rec[w].1).collect();
            row.push(w1_empirical_1d(&xs, &ys)? / d0);
        }
        out.push(row);
    }
    Ok(out)
}
