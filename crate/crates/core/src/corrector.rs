//! Stationary measures and the corrector function.
//!
//! The corrector solves the Poisson equation h = psi + Ph for a centered
//! observable. We adopt chi := sum_{i>=1} P^i psi as the canonical corrector
//! (equivalently chi = Ph = h - psi), because that convention makes
//! S_n = sum Z_k with Z_k = h(X_k) - Ph(X_{k-1}) an exact martingale; the
//! sum-from-zero h is exposed alongside it.
//!
//! Finite chains are solved exactly (fundamental-matrix linear solve). For
//! scalar samplable kernels, a per-state truncated-series Monte Carlo
//! estimator is provided (`corrector_mc`), plus a deterministic grid
//! evaluator (`scalar_grid_corrector`) that iterates the transition operator
//! on an interpolation grid — the workhorse when a corrector value is needed
//! at every step of a long trajectory, where per-call Monte Carlo noise
//! would bias quadratic statistics.

use crate::error::{Error, Result};
use crate::kernel::{KernelKind, NoiseKind, TransitionKernel};
use crate::observable::Observable;
use crate::space::{SpaceKind, State};
use crate::util::{mean, pairwise_sum, standard_error};
use crate::wasserstein::{w1_finite, ContractionCertificate, FiniteMeasure};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

const RESIDUAL_TOL: f64 = 1e-10;

/// The stationary measure mu*, exact or sampled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum StationaryMeasure {
    Finite {
        weights: Vec<f64>,
    },
    Empirical {
        samples: Vec<f64>,
        burn_in: usize,
        n: usize,
        seed: u64,
    },
}

impl StationaryMeasure {
    /// <f, mu*> for an observable.
    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        match self {
            StationaryMeasure::Finite { weights } => {
                let vals: Vec<f64> = (0..weights.len())
                    .map(|i| obs.eval(&State::Index(i)))
                    .collect::<Result<_>>()?;
                Ok(weights.iter().zip(&vals).map(|(w, v)| w * v).sum())
            }
            StationaryMeasure::Empirical { samples, .. } => {
                let vals: Vec<f64> = samples
                    .iter()
                    .map(|&x| obs.eval(&State::Real(x)))
                    .collect::<Result<_>>()?;
                Ok(mean(&vals))
            }
        }
    }

    /// W1 distance d(delta_x, mu*): exact transport for finite measures,
    /// the mean absolute gap for empirical scalar ones (exact for W1 against
    /// a point mass).
    pub fn w1_to_dirac(&self, x: &State, kernel: &TransitionKernel) -> Result<f64> {
        match self {
            StationaryMeasure::Finite { weights } => {
                let metric = kernel.space.metric_matrix()?;
                let dirac = FiniteMeasure::dirac(x.as_index()?, weights.len())?;
                w1_finite(&dirac, &FiniteMeasure::new(weights.clone())?, &metric)
            }
            StationaryMeasure::Empirical { samples, .. } => {
                let x = x.as_real()?;
                let gaps: Vec<f64> = samples.iter().map(|s| (x - s).abs()).collect();
                Ok(mean(&gaps))
            }
        }
    }

    /// Occupation weights over a finite space (counts for empirical samples).
    pub fn finite_weights(&self, size: usize) -> Result<Vec<f64>> {
        match self {
            StationaryMeasure::Finite { weights } => Ok(weights.clone()),
            StationaryMeasure::Empirical { samples, .. } => {
                let mut w = vec![0.0; size];
                for &s in samples {
                    let i = s as usize;
                    if s.fract() != 0.0 || i >= size {
                        return Err(Error::Invalid(format!("sample {s} is not a state index")));
                    }
                    w[i] += 1.0;
                }
                let total = samples.len() as f64;
                Ok(w.into_iter().map(|x| x / total).collect())
            }
        }
    }
}

/// Gaussian elimination with partial pivoting; a vanishing pivot means the
/// system is rank deficient.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, &x| acc.max(x.abs()))
        .max(1e-300);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-12 * scale {
            return Err(Error::NonUniqueStationary);
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Ok(x)
}

/// Exact stationary measure of a finite kernel: solve mu P = mu, sum mu = 1.
pub fn stationary_finite(kernel: &TransitionKernel) -> Result<StationaryMeasure> {
    let fk = kernel
        .as_finite()
        .ok_or_else(|| Error::Invalid("stationary_finite needs a finite kernel".into()))?;
    let m = fk.size();
    if m == 1 {
        return Ok(StationaryMeasure::Finite { weights: vec![1.0] });
    }
    // Rows 0..m-1: (P^T - I) mu = 0 with the last (redundant) equation
    // replaced by the normalization sum mu = 1.
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..m - 1 {
        for j in 0..m {
            a[i][j] = fk.rows[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..m {
        a[m - 1][j] = 1.0;
    }
    let mut b = vec![0.0; m];
    b[m - 1] = 1.0;
    let mut weights = solve_linear(a, b)?;
    for w in &mut weights {
        if *w < -1e-12 {
            return Err(Error::NonUniqueStationary);
        }
        *w = w.max(0.0);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    // Residual ||mu P - mu||_1 must vanish.
    let evolved = fk.evolve(&weights)?;
    let residual: f64 = evolved
        .iter()
        .zip(&weights)
        .map(|(a, b)| (a - b).abs())
        .sum();
    if residual > RESIDUAL_TOL {
        return Err(Error::Estimation(format!(
            "stationary residual {residual:e} exceeds {RESIDUAL_TOL:e}"
        )));
    }
    Ok(StationaryMeasure::Finite { weights })
}

/// Empirical stationary surrogate: occupation sample of X_{burn_in}..X_{burn_in+n}.
pub fn stationary_empirical(
    kernel: &TransitionKernel,
    burn_in: usize,
    n: usize,
    seed: u64,
) -> Result<StationaryMeasure> {
    let init = default_initial(kernel);
    let mut samples = Vec::with_capacity(n + 1);
    crate::kernel::simulate_visit(kernel, &init, burn_in + n, seed, 0, |k, x| {
        if k >= burn_in {
            samples.push(x.value());
        }
    })?;
    Ok(StationaryMeasure::Empirical {
        samples,
        burn_in,
        n,
        seed,
    })
}

pub(crate) fn default_initial(kernel: &TransitionKernel) -> crate::kernel::InitialDistribution {
    use crate::kernel::InitialDistribution as I;
    match &kernel.space.kind {
        SpaceKind::Finite { .. } => I::Dirac(State::Index(0)),
        SpaceKind::Interval { lo, hi } => I::Uniform { lo: *lo, hi: *hi },
        SpaceKind::Line => I::Dirac(State::Real(0.0)),
    }
}

/// Marker for the series convention of the stored corrector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesConvention {
    /// chi = sum_{i>=1} P^i psi (canonical; S_n is an exact martingale).
    TailFromOne,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CorrectorRepr {
    /// Exact value table of h = sum_{i>=0} P^i psi over finite states.
    FiniteTable { h: Vec<f64> },
    /// h on a uniform scalar grid, evaluated by linear interpolation;
    /// `err_bound` is the per-call bound (series truncation + grid error).
    ScalarGrid {
        lo: f64,
        hi: f64,
        h: Vec<f64>,
        err_bound: f64,
    },
}

/// The corrector pair (chi, h) for one kernel and observable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corrector {
    pub repr: CorrectorRepr,
    pub observable: Observable,
    pub convention: SeriesConvention,
    /// Lip(chi) <= L c gamma / (1 - gamma) from the certificate (infinite
    /// when built without one).
    pub lip_bound: f64,
    /// Hash of the kernel this corrector was built for.
    pub kernel_hash: String,
}

impl Corrector {
    /// h(x) = sum_{i>=0} P^i psi (x).
    pub fn h(&self, x: &State) -> Result<f64> {
        match &self.repr {
            CorrectorRepr::FiniteTable { h } => {
                let i = x.as_index()?;
                h.get(i).copied().ok_or(Error::DomainError {
                    state: format!("{i}"),
                    reason: "state beyond corrector table".into(),
                })
            }
            CorrectorRepr::ScalarGrid { lo, hi, h, .. } => Ok(interp(*lo, *hi, h, x.as_real()?)),
        }
    }

    /// chi(x) = h(x) - psi(x) = (Ph)(x), the canonical corrector.
    pub fn chi(&self, x: &State) -> Result<f64> {
        Ok(self.h(x)? - self.observable.eval(x)?)
    }

    /// Martingale difference for an observed transition x -> y:
    /// Z = h(y) - Ph(x) = h(y) - chi(x).
    pub fn difference(&self, x: &State, y: &State) -> Result<f64> {
        Ok(self.h(y)? - self.chi(x)?)
    }

    /// Oscillation of chi: exact over finite tables, over the grid otherwise.
    pub fn chi_oscillation(&self) -> Result<f64> {
        let states: Vec<State> = match &self.repr {
            CorrectorRepr::FiniteTable { h } => (0..h.len()).map(State::Index).collect(),
            CorrectorRepr::ScalarGrid { lo, hi, h, .. } => (0..h.len())
                .map(|g| State::Real(lo + (hi - lo) * g as f64 / (h.len() - 1) as f64))
                .collect(),
        };
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for s in &states {
            let c = self.chi(s)?;
            min = min.min(c);
            max = max.max(c);
        }
        Ok(max - min)
    }
}

fn interp(lo: f64, hi: f64, values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (t.floor() as usize).min(n - 2);
    let frac = t - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

fn lip_bound_from(cert: Option<&ContractionCertificate>, lipschitz: f64) -> f64 {
    match cert {
        Some(c) => lipschitz * c.c * c.gamma / (1.0 - c.gamma),
        None => f64::INFINITY,
    }
}

/// Exact corrector on a finite chain: solve (I - P + 1 mu*^T) h = psi, which
/// pins <h, mu*> = 0 and gives the mean-zero Poisson solution.
pub fn corrector_finite(
    kernel: &TransitionKernel,
    psi: &Observable,
    mu_star: &StationaryMeasure,
    cert: Option<&ContractionCertificate>,
) -> Result<Corrector> {
    let fk = kernel
        .as_finite()
        .ok_or_else(|| Error::Invalid("corrector_finite needs a finite kernel".into()))?;
    let m = fk.size();
    let weights = mu_star.finite_weights(m)?;
    let psi_vals = psi.table_values(&kernel.space)?;
    let mean_psi: f64 = weights.iter().zip(&psi_vals).map(|(w, v)| w * v).sum();
    if mean_psi.abs() > RESIDUAL_TOL {
        return Err(Error::UncenteredObservable {
            mean: mean_psi,
            tol: RESIDUAL_TOL,
        });
    }
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            a[i][j] = if i == j { 1.0 } else { 0.0 } - fk.rows[i][j] + weights[j];
        }
    }
    let h = solve_linear(a, psi_vals.clone())?;
    // Residuals of the fixed-point identity and the normalization.
    let ph = fk.apply(&h)?;
    for i in 0..m {
        let r = (h[i] - psi_vals[i] - ph[i]).abs();
        if r > RESIDUAL_TOL {
            return Err(Error::Estimation(format!(
                "Poisson residual {r:e} at state {i}"
            )));
        }
    }
    let mean_h: f64 = weights.iter().zip(&h).map(|(w, v)| w * v).sum();
    if mean_h.abs() > RESIDUAL_TOL {
        return Err(Error::Estimation(format!("<h, mu*> = {mean_h:e} not pinned")));
    }
    Ok(Corrector {
        repr: CorrectorRepr::FiniteTable { h },
        observable: psi.clone(),
        convention: SeriesConvention::TailFromOne,
        lip_bound: lip_bound_from(cert, psi.lipschitz),
        kernel_hash: kernel.hash(),
    })
}

/// Truncated-series Monte Carlo estimate of h(x) with an explicit error
/// bound: series tail (from the certificate) plus three pooled standard
/// errors of the replica mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McCorrectorEstimate {
    pub x: f64,
    pub estimate: f64,
    pub error_bound: f64,
    pub truncation: usize,
    pub replicas: usize,
    pub seed: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn corrector_mc(
    kernel: &TransitionKernel,
    psi: &Observable,
    x: &State,
    truncation: usize,
    replicas: usize,
    seed: u64,
    cert: Option<&ContractionCertificate>,
    mu_star: &StationaryMeasure,
) -> Result<McCorrectorEstimate> {
    if truncation == 0 || replicas == 0 {
        return Err(Error::Invalid("truncation and replicas must be >= 1".into()));
    }
    kernel.space.check_state(x)?;
    let tail = match cert {
        Some(c) => {
            let d = mu_star.w1_to_dirac(x, kernel)?;
            psi.lipschitz * c.c * c.gamma.powi(truncation as i32 + 1) / (1.0 - c.gamma) * d
        }
        None => return Err(Error::MissingCertificate),
    };
    let init = crate::kernel::InitialDistribution::Dirac(*x);
    let path_sums: Vec<f64> = (0..replicas)
        .map(|r| {
            let mut acc = 0.0;
            crate::kernel::simulate_visit(kernel, &init, truncation, seed, r as u64, |_, s| {
                acc += psi.eval(s).unwrap_or(f64::NAN);
            })?;
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    let estimate = mean(&path_sums);
    let se = standard_error(&path_sums);
    Ok(McCorrectorEstimate {
        x: x.value(),
        estimate,
        error_bound: tail + 3.0 * se,
        truncation,
        replicas,
        seed,
    })
}

/// Default series truncation: smallest N with
/// L c gamma^{N+1} / (1-gamma) * diameter < tol / 2.
pub fn default_truncation(
    cert: &ContractionCertificate,
    lipschitz: f64,
    diameter: f64,
    tol: f64,
) -> usize {
    let mut n = 1usize;
    while lipschitz * cert.c * cert.gamma.powi(n as i32 + 1) / (1.0 - cert.gamma) * diameter
        >= tol / 2.0
    {
        n += 1;
        if n > 1_000_000 {
            break;
        }
    }
    n
}

/// Deterministic grid corrector for scalar kernels: h = sum_i Phat^i psi on a
/// uniform grid, with Phat the exact mixture (IFS) or a quantile quadrature
/// (AR) composed with linear interpolation. Linear interpolation is exact on
/// affine functions, so affine-corrector kernels (e.g. the dyadic system)
/// come out to machine precision.
pub fn scalar_grid_corrector(
    kernel: &TransitionKernel,
    psi: &Observable,
    cert: &ContractionCertificate,
    grid_points: usize,
) -> Result<Corrector> {
    if grid_points < 8 {
        return Err(Error::Invalid("grid needs >= 8 points".into()));
    }
    let (lo, hi) = match (&kernel.space.kind, &kernel.kind) {
        (SpaceKind::Interval { lo, hi }, _) => (*lo, *hi),
        (SpaceKind::Line, KernelKind::Ar(ar)) => {
            let sd = ar.stationary_variance().sqrt();
            (-10.0 * sd, 10.0 * sd)
        }
        _ => {
            return Err(Error::Invalid(
                "grid corrector needs a scalar samplable kernel".into(),
            ))
        }
    };
    let grid: Vec<f64> = (0..grid_points)
        .map(|g| lo + (hi - lo) * g as f64 / (grid_points - 1) as f64)
        .collect();
    let psi_grid: Vec<f64> = grid
        .iter()
        .map(|&x| psi.eval(&State::Real(x)))
        .collect::<Result<_>>()?;

    // Quantile nodes for AR quadrature (midpoint rule in probability space).
    let quad_nodes: Option<Vec<f64>> = match &kernel.kind {
        KernelKind::Ar(ar) => {
            let q = 512;
            let normal = Normal::new(0.0, 1.0).unwrap();
            let nodes = (0..q)
                .map(|i| {
                    let u = (i as f64 + 0.5) / q as f64;
                    match ar.noise {
                        NoiseKind::Gaussian { sd } => sd * normal.inverse_cdf(u),
                        NoiseKind::Uniform { half_width } => half_width * (2.0 * u - 1.0),
                    }
                })
                .collect();
            Some(nodes)
        }
        _ => None,
    };

    let apply_op = |f: &[f64]| -> Result<Vec<f64>> {
        grid.iter()
            .map(|&x| match &kernel.kind {
                KernelKind::Ifs(ifs) => Ok(ifs
                    .maps
                    .iter()
                    .zip(&ifs.probs)
                    .map(|(m, p)| p * interp(lo, hi, f, m.apply(x)))
                    .sum()),
                KernelKind::Ar(ar) => {
                    let nodes = quad_nodes.as_ref().unwrap();
                    let vals: Vec<f64> = nodes
                        .iter()
                        .map(|z| interp(lo, hi, f, ar.coefficient * x + z))
                        .collect();
                    Ok(pairwise_sum(&vals) / nodes.len() as f64)
                }
                KernelKind::Finite(_) => Err(Error::Invalid("finite kernel on a grid".into())),
            })
            .collect()
    };

    let diameter = hi - lo;
    let n_terms = default_truncation(cert, psi.lipschitz, diameter, 1e-9).min(10_000);
    let mut h = psi_grid.clone();
    let mut term = psi_grid;
    for _ in 0..n_terms {
        term = apply_op(&term)?;
        for (acc, t) in h.iter_mut().zip(&term) {
            *acc += t;
        }
    }
    let tail = psi.lipschitz * cert.c * cert.gamma.powi(n_terms as i32 + 1) / (1.0 - cert.gamma)
        * diameter;
    let lip_h = psi.lipschitz * (1.0 + cert.c * cert.gamma / (1.0 - cert.gamma));
    let grid_err = lip_h * diameter / (grid_points - 1) as f64 / 2.0;
    Ok(Corrector {
        repr: CorrectorRepr::ScalarGrid {
            lo,
            hi,
            h,
            err_bound: tail + grid_err,
        },
        observable: psi.clone(),
        convention: SeriesConvention::TailFromOne,
        lip_bound: lip_bound_from(Some(cert), psi.lipschitz),
        kernel_hash: kernel.hash(),
    })
}

/// Build the corrector for any kernel: exact table on finite chains, grid
/// evaluator otherwise.
pub fn build_corrector(
    kernel: &TransitionKernel,
    psi: &Observable,
    mu_star: &StationaryMeasure,
    cert: &ContractionCertificate,
) -> Result<Corrector> {
    if kernel.is_finite() {
        corrector_finite(kernel, psi, mu_star, Some(cert))
    } else {
        scalar_grid_corrector(kernel, psi, cert, 4096)
    }
}

/// CSV export (state, chi, h) of a corrector table.
pub fn write_corrector_csv<W: std::io::Write>(corr: &Corrector, mut w: W) -> Result<()> {
    writeln!(w, "state,chi,h")?;
    match &corr.repr {
        CorrectorRepr::FiniteTable { h } => {
            for i in 0..h.len() {
                let s = State::Index(i);
                writeln!(w, "{},{},{}", i, corr.chi(&s)?, corr.h(&s)?)?;
            }
        }
        CorrectorRepr::ScalarGrid { lo, hi, h, .. } => {
            for g in 0..h.len() {
                let x = lo + (hi - lo) * g as f64 / (h.len() - 1) as f64;
                let s = State::Real(x);
                writeln!(w, "{},{},{}", x, corr.chi(&s)?, corr.h(&s)?)?;
            }
        }
    }
    Ok(())
}

/// Center an observable against a stationary measure so <psi, mu*> = 0.
pub fn center_observable(obs: &Observable, mu_star: &StationaryMeasure) -> Result<Observable> {
    let current = mu_star.expectation(obs)?;
    Ok(obs.clone().with_offset(obs.offset + current))
}
