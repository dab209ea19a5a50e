//! Audits of the checkable hypotheses behind the path statements.
//!
//! * `check_e1` / `check_e2`: the moment-series conditions for the
//!   martingale LIL — empirical partial sums over a finite horizon plus the
//!   analytic tail majorant sup E|Z|^{2+delta} * sum s_n^{-2-delta} (the
//!   domination used to prove both series converge). A check passes when the
//!   tail is a small fraction of the partial sum and the summands decay.
//! * `check_e3`: the quadratic-variation law (1/n) sum Z_l^2 -> sigma^2,
//!   with the n0-spaced sub-averages that reduce it to ergodic averages.
//! * `check_slln`: W_n / n against the iterated-logarithm envelope.
//! * `audit_h_lipschitz`: exact enumeration of the nested-kernel functional
//!   H_{n,k} on a small finite chain against its analytic Lipschitz bound
//!   L (c gamma + 1) / (1 - gamma0).
//! * `check_borel_cantelli`: the event probabilities that transfer the LIL
//!   from the martingale to the raw sums; for bounded correctors they are
//!   exactly zero past the oscillation cutoff.

use crate::corrector::Corrector;
use crate::error::{Error, Result};
use crate::kernel::{InitialDistribution, TransitionKernel};
use crate::rng::{Purpose, Stream};
use crate::space::{SpaceKind, State};
use crate::util::{geometric_grid, log_log, mean, standard_error};
use crate::verdict::{ConditionReport, DiagnosticRow, Verdict};
use crate::wasserstein::ContractionCertificate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const MIN_REPLICAS_E12: usize = 32;

/// Integral tail bound: sum_{n > horizon} (sigma2 n)^{-1-delta/2}.
fn variance_series_tail(sigma2: f64, delta: f64, horizon: usize) -> f64 {
    (sigma2).powf(-1.0 - delta / 2.0) * (horizon as f64).powf(-delta / 2.0) * 2.0 / delta
}

/// Shared machinery for (e1)/(e2): per-n ensemble means of a truncated
/// moment, accumulated against s_n, plus the analytic tail majorant.
struct SeriesCheck {
    partial: f64,
    per_replica_partial: Vec<f64>,
    rows: Vec<DiagnosticRow>,
    tail: f64,
    decays: bool,
}

fn run_series_check(
    z_ensemble: &[Vec<f64>],
    s2: &[f64],
    summand: impl Fn(f64, f64) -> f64, // (z, s_n) -> numerator contribution
    normalizer: impl Fn(f64) -> f64,   // s_n -> divisor
    tail: f64,
) -> SeriesCheck {
    let replicas = z_ensemble.len();
    let horizon = z_ensemble
        .iter()
        .map(|z| z.len())
        .min()
        .unwrap_or(0)
        .min(s2.len());
    let mut partial = 0.0;
    let mut per_replica_partial = vec![0.0; replicas];
    let mut rows = Vec::new();
    let checkpoints = geometric_grid(10.min(horizon), 2.0, horizon);
    let mut cp = 0usize;
    let mut summands = Vec::with_capacity(horizon);
    for n in 1..=horizon {
        let s_n = s2[n - 1].sqrt();
        let mut acc = 0.0;
        for (r, z) in z_ensemble.iter().enumerate() {
            let contrib = summand(z[n - 1], s_n) / normalizer(s_n);
            acc += contrib;
            per_replica_partial[r] += contrib;
        }
        let term = acc / replicas as f64;
        partial += term;
        summands.push(term);
        if cp < checkpoints.len() && checkpoints[cp] == n {
            rows.push(DiagnosticRow {
                n: n as u64,
                value: partial,
                bound: tail,
            });
            cp += 1;
        }
    }
    // Decay of the summands: the late-window average must not exceed the
    // early-window average.
    let w = (horizon / 10).max(1);
    let early = mean(&summands[..w.min(summands.len())]);
    let late = mean(&summands[summands.len().saturating_sub(w)..]);
    SeriesCheck {
        partial,
        per_replica_partial,
        rows,
        tail,
        decays: late <= early + 1e-15,
    }
}

fn series_verdict(check: &SeriesCheck) -> (Verdict, String) {
    let threshold = 0.10 * check.partial;
    if check.partial == 0.0 && check.tail == 0.0 {
        return (Verdict::Pass, "series identically zero".into());
    }
    let se = standard_error(&check.per_replica_partial);
    if se > 0.5 * threshold.max(1e-300) {
        return (
            Verdict::Inconclusive,
            format!("partial-sum SE {se:.3e} exceeds half the tail threshold"),
        );
    }
    if check.tail <= threshold && check.decays {
        (
            Verdict::Pass,
            format!(
                "tail {:.3e} is {:.1}% of partial sum {:.6e}; summands decay",
                check.tail,
                100.0 * check.tail / check.partial,
                check.partial
            ),
        )
    } else {
        (
            Verdict::Fail,
            format!(
                "tail {:.3e} vs partial {:.6e} (threshold 10%); decay: {}",
                check.tail, check.partial, check.decays
            ),
        )
    }
}

/// Fourth-moment series: sum s_n^{-4} E[Z_n^4 1_{|Z_n| < gamma s_n}].
pub fn check_e1(
    z_ensemble: &[Vec<f64>],
    s2: &[f64],
    delta: f64,
    gamma_thresh: f64,
    sup_moment_exact: Option<f64>,
) -> Result<ConditionReport> {
    validate_e12_inputs(z_ensemble, s2, delta)?;
    let horizon = z_ensemble.iter().map(|z| z.len()).min().unwrap().min(s2.len());
    let sup_moment = sup_moment_exact.unwrap_or_else(|| sup_z_moment(z_ensemble, delta));
    let sigma2_eff = s2[horizon - 1] / horizon as f64;
    let tail = gamma_thresh.powf(2.0 - delta)
        * sup_moment
        * variance_series_tail(sigma2_eff, delta, horizon);
    let check = run_series_check(
        z_ensemble,
        s2,
        |z, s_n| {
            if z.abs() < gamma_thresh * s_n {
                z.powi(4)
            } else {
                0.0
            }
        },
        |s_n| s_n.powi(4),
        tail,
    );
    let (verdict, note) = series_verdict(&check);
    Ok(ConditionReport {
        id: "e1".into(),
        params: serde_json::json!({
            "delta": delta, "gamma_thresh": gamma_thresh, "horizon": horizon,
            "replicas": z_ensemble.len(), "sup_z_moment": sup_moment,
            "partial_sum": check.partial, "tail_majorant": check.tail,
        }),
        diagnostics: check.rows,
        verdict,
        note,
    })
}

/// Truncated-first-moment series: sum s_n^{-1} E[|Z_n| 1_{|Z_n| >= eps s_n}].
pub fn check_e2(
    z_ensemble: &[Vec<f64>],
    s2: &[f64],
    delta: f64,
    eps: f64,
    sup_moment_exact: Option<f64>,
) -> Result<ConditionReport> {
    validate_e12_inputs(z_ensemble, s2, delta)?;
    if eps <= 0.0 {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    let horizon = z_ensemble.iter().map(|z| z.len()).min().unwrap().min(s2.len());
    let sup_moment = sup_moment_exact.unwrap_or_else(|| sup_z_moment(z_ensemble, delta));
    let sigma2_eff = s2[horizon - 1] / horizon as f64;
    let tail =
        eps.powf(-1.0 - delta) * sup_moment * variance_series_tail(sigma2_eff, delta, horizon);
    let check = run_series_check(
        z_ensemble,
        s2,
        |z, s_n| {
            if z.abs() >= eps * s_n {
                z.abs()
            } else {
                0.0
            }
        },
        |s_n| s_n,
        tail,
    );
    let (verdict, note) = series_verdict(&check);
    Ok(ConditionReport {
        id: "e2".into(),
        params: serde_json::json!({
            "delta": delta, "eps": eps, "horizon": horizon,
            "replicas": z_ensemble.len(), "sup_z_moment": sup_moment,
            "partial_sum": check.partial, "tail_majorant": check.tail,
        }),
        diagnostics: check.rows,
        verdict,
        note,
    })
}

/// Both series at once (the eps grid reuses one ensemble).
pub fn check_e1_e2(
    z_ensemble: &[Vec<f64>],
    s2: &[f64],
    delta: f64,
    gamma_thresh: f64,
    eps_grid: &[f64],
    sup_moment_exact: Option<f64>,
) -> Result<Vec<ConditionReport>> {
    let mut out = vec![check_e1(z_ensemble, s2, delta, gamma_thresh, sup_moment_exact)?];
    for &eps in eps_grid {
        out.push(check_e2(z_ensemble, s2, delta, eps, sup_moment_exact)?);
    }
    Ok(out)
}

fn validate_e12_inputs(z_ensemble: &[Vec<f64>], s2: &[f64], delta: f64) -> Result<()> {
    if delta <= 0.0 {
        return Err(Error::Invalid("delta must be positive".into()));
    }
    if z_ensemble.len() < MIN_REPLICAS_E12 {
        return Err(Error::Invalid(format!(
            "need >= {MIN_REPLICAS_E12} replicas, got {}",
            z_ensemble.len()
        )));
    }
    if s2.is_empty() || z_ensemble.iter().any(|z| z.is_empty()) {
        return Err(Error::Invalid("empty sequences".into()));
    }
    Ok(())
}

/// sup over n of the ensemble mean of |Z_n|^{2+delta}.
fn sup_z_moment(z_ensemble: &[Vec<f64>], delta: f64) -> f64 {
    let horizon = z_ensemble.iter().map(|z| z.len()).min().unwrap();
    let replicas = z_ensemble.len() as f64;
    (0..horizon)
        .map(|i| {
            z_ensemble
                .iter()
                .map(|z| z[i].abs().powf(2.0 + delta))
                .sum::<f64>()
                / replicas
        })
        .fold(0.0, f64::max)
}

/// Quadratic-variation check: (1/n) sum Z_l^2 -> sigma^2 along geometric
/// checkpoints, with the n0-spaced sub-averages reported alongside.
pub fn check_e3(z: &[f64], sigma2: f64, n0: u32) -> Result<ConditionReport> {
    if sigma2 <= 0.0 {
        return Err(Error::DegenerateVariance { sigma2 });
    }
    let n = z.len();
    if n < 10_000 {
        return Err(Error::Invalid(format!("need >= 1e4 samples, got {n}")));
    }
    let checkpoints = geometric_grid(1000, 2.0, n);
    let mut rows = Vec::new();
    let mut acc = 0.0;
    let mut cp = 0usize;
    for (i, &zi) in z.iter().enumerate() {
        acc += zi * zi;
        if cp < checkpoints.len() && checkpoints[cp] == i + 1 {
            rows.push(DiagnosticRow {
                n: (i + 1) as u64,
                value: acc / (i + 1) as f64,
                bound: sigma2,
            });
            cp += 1;
        }
    }
    let first_dev = (rows.first().unwrap().value - sigma2).abs();
    let final_dev = (rows.last().unwrap().value - sigma2).abs();
    let rel = final_dev / sigma2;
    // n0-spaced sub-averages (1/m) sum_l Z_{i + l n0}^2 for i = 1..n0.
    let n0u = n0.max(1) as usize;
    let mut sub_averages = Vec::with_capacity(n0u);
    for i in 1..=n0u {
        let vals: Vec<f64> = (0..)
            .map(|l| i + l * n0u)
            .take_while(|&idx| idx <= n)
            .map(|idx| z[idx - 1] * z[idx - 1])
            .collect();
        sub_averages.push(mean(&vals));
    }
    let sub_ok = sub_averages
        .iter()
        .all(|v| (v - sigma2).abs() / sigma2 <= 0.03);
    let verdict = if rel <= 0.02 && final_dev <= first_dev + 1e-12 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ConditionReport {
        id: "e3".into(),
        params: serde_json::json!({
            "sigma2": sigma2, "n0": n0, "length": n,
            "final_relative_deviation": rel,
            "sub_averages": sub_averages, "sub_averages_within_3pct": sub_ok,
        }),
        diagnostics: rows,
        verdict,
        note: format!("final (1/n) sum Z^2 deviates {:.3}% from sigma^2", 100.0 * rel),
    })
}

/// Ergodic-average check: |W_n / n| under three LIL envelopes or 0.01.
pub fn check_slln(w: &[f64], sigma: f64) -> Result<ConditionReport> {
    let n = w.len().saturating_sub(1);
    if n < 10_000 {
        return Err(Error::Invalid(format!("need >= 1e4 steps, got {n}")));
    }
    let checkpoints = geometric_grid(1000, 2.0, n);
    let rows: Vec<DiagnosticRow> = checkpoints
        .iter()
        .map(|&c| {
            let envelope = 3.0 * sigma * (2.0 * log_log(c as f64) / c as f64).sqrt();
            DiagnosticRow {
                n: c as u64,
                value: w[c] / c as f64,
                bound: envelope.max(0.01),
            }
        })
        .collect();
    let last = rows.last().unwrap().clone();
    let verdict = if last.value.abs() <= last.bound {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(ConditionReport {
        id: "slln".into(),
        params: serde_json::json!({ "sigma": sigma, "length": n }),
        diagnostics: rows,
        verdict,
        note: format!(
            "|W_n/n| = {:.6e} vs envelope {:.6e} at n = {}",
            last.value.abs(),
            last.bound,
            last.n
        ),
    })
}

/// Result of the nested-kernel Lipschitz audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzAudit {
    pub n: usize,
    pub k: usize,
    pub chain_size: usize,
    pub k_odd: u32,
    pub k_even: u32,
    /// max |H(x) - H(y)| / rho(x, y) by exact enumeration.
    pub measured_h: f64,
    /// max single-coordinate Lipschitz constant of the integrand g.
    pub measured_g: f64,
    /// L (c gamma + 1) / (1 - gamma0) with L = 2 (Lip chi + Lip psi)(1 + sigma^2).
    pub analytic_bound: f64,
    pub lemma_l: f64,
    pub pass: bool,
}

/// Exact enumeration audit of H_{n,k} on a small finite chain.
///
/// H_{n,k}(x) integrates the min-of-truncated-averages integrand g_{n,k}
/// over 2(n+k) chained kernel steps with step exponents k_l (defaults: 1 for
/// odd l, n0 - 1 for even l, the values used when H is evaluated along the
/// n0-spaced subsequence). The measured Lipschitz constant of H must sit
/// below L (c gamma + 1) / (1 - gamma0).
#[allow(clippy::too_many_arguments)]
pub fn audit_h_lipschitz(
    kernel: &TransitionKernel,
    corrector: &Corrector,
    sigma2: f64,
    n: usize,
    k: usize,
    cert: &ContractionCertificate,
    k_odd: Option<u32>,
    k_even: Option<u32>,
) -> Result<LipschitzAudit> {
    if cert.gamma0 >= 1.0 || !(cert.gamma > 0.0 && cert.gamma < 1.0) {
        return Err(Error::Invalid(format!(
            "corrupted certificate: gamma0 = {}, gamma = {}",
            cert.gamma0, cert.gamma
        )));
    }
    let fk = kernel
        .as_finite()
        .ok_or_else(|| Error::Invalid("Lipschitz audit needs a finite kernel".into()))?;
    let m = fk.size();
    if m > 8 || n == 0 || n + k > 3 {
        return Err(Error::Invalid(
            "instance too large for exact enumeration (need states <= 8, 1 <= n, n + k <= 3)"
                .into(),
        ));
    }
    let k_odd = k_odd.unwrap_or(1).max(1);
    let k_even = k_even.unwrap_or(cert.n0.saturating_sub(1)).max(1);

    let power = |e: u32| -> Vec<Vec<f64>> {
        let mut acc: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        for _ in 0..e {
            let mut next = vec![vec![0.0; m]; m];
            for (row, next_row) in acc.iter().zip(next.iter_mut()) {
                for (j, cell) in next_row.iter_mut().enumerate() {
                    *cell = (0..m).map(|l| row[l] * fk.rows[l][j]).sum();
                }
            }
            acc = next;
        }
        acc
    };
    let q_odd = power(k_odd);
    let q_even = power(k_even);

    let chi: Vec<f64> = (0..m)
        .map(|i| corrector.chi(&State::Index(i)))
        .collect::<Result<_>>()?;
    let psi: Vec<f64> = (0..m)
        .map(|i| corrector.observable.eval(&State::Index(i)))
        .collect::<Result<_>>()?;

    let vars = 2 * (n + k);
    let g = |tuple: &[usize]| -> f64 {
        // Z_l = chi(y_{2l}) - chi(y_{2l-1}) + psi(y_{2l}); prefix sums of
        // Z^2; truncated averages min'd over window lengths n..n+k.
        let mut prefix = 0.0;
        let mut best = f64::INFINITY;
        for l in 1..=(n + k) {
            let z = chi[tuple[2 * l - 1]] - chi[tuple[2 * l - 2]] + psi[tuple[2 * l - 1]];
            prefix += z * z;
            if l >= n {
                let p = l as f64;
                let term = prefix.min(p * (1.0 + sigma2)) / p - sigma2;
                best = best.min(term);
            }
        }
        best.abs().min(1.0)
    };

    // H(x) = sum over tuples of prod_l Q_{parity(l)}(y_{l-1}, y_l) g(tuple),
    // by depth-first enumeration with the running tuple probability.
    let h_of = |x: usize| -> f64 {
        let mut total = 0.0;
        let mut tuple = vec![0usize; vars];
        let mut stack: Vec<(usize, usize, f64)> = vec![]; // (pos, prev, prob)
        // Iterative DFS to keep the closure simple.
        let mut frame = vec![(0usize, x, 1.0f64, 0usize)]; // (pos, prev, prob, next_y)
        while let Some((pos, prev, prob, next_y)) = frame.pop() {
            if pos == vars {
                total += prob * g(&tuple);
                continue;
            }
            if next_y >= m {
                continue;
            }
            frame.push((pos, prev, prob, next_y + 1));
            let q = if (pos + 1) % 2 == 1 { &q_odd } else { &q_even };
            let p = q[prev][next_y];
            if p > 0.0 {
                tuple[pos] = next_y;
                frame.push((pos + 1, next_y, prob * p, 0));
            }
        }
        let _ = &mut stack;
        total
    };
    let h: Vec<f64> = (0..m).map(h_of).collect();

    let mut measured_h: f64 = 0.0;
    for x in 0..m {
        for y in 0..m {
            if x == y {
                continue;
            }
            let d = kernel.space.rho(&State::Index(x), &State::Index(y))?;
            if d > 0.0 {
                measured_h = measured_h.max((h[x] - h[y]).abs() / d);
            }
        }
    }

    // Per-coordinate Lipschitz constant of g by full enumeration.
    let mut measured_g: f64 = 0.0;
    let mut tuple = vec![0usize; vars];
    loop {
        let base = g(&tuple);
        for pos in 0..vars {
            let orig = tuple[pos];
            for alt in 0..m {
                if alt == orig {
                    continue;
                }
                let d = kernel.space.rho(&State::Index(orig), &State::Index(alt))?;
                if d == 0.0 {
                    continue;
                }
                tuple[pos] = alt;
                let variant = g(&tuple);
                measured_g = measured_g.max((variant - base).abs() / d);
            }
            tuple[pos] = orig;
        }
        let mut carry = 0usize;
        loop {
            if carry == vars {
                break;
            }
            tuple[carry] += 1;
            if tuple[carry] < m {
                break;
            }
            tuple[carry] = 0;
            carry += 1;
        }
        if carry == vars {
            break;
        }
    }

    let lip_chi = measured_lipschitz(&chi, kernel)?;
    let lip_psi = measured_lipschitz(&psi, kernel)?;
    let lemma_l = 2.0 * (lip_chi + lip_psi) * (1.0 + sigma2);
    let analytic_bound = lemma_l * (cert.c * cert.gamma + 1.0) / (1.0 - cert.gamma0);
    let pass = measured_h <= analytic_bound + 1e-9;
    Ok(LipschitzAudit {
        n,
        k,
        chain_size: m,
        k_odd,
        k_even,
        measured_h,
        measured_g,
        analytic_bound,
        lemma_l,
        pass,
    })
}

fn measured_lipschitz(values: &[f64], kernel: &TransitionKernel) -> Result<f64> {
    let m = values.len();
    let mut lip: f64 = 0.0;
    for x in 0..m {
        for y in 0..m {
            if x == y {
                continue;
            }
            let d = kernel.space.rho(&State::Index(x), &State::Index(y))?;
            if d > 0.0 {
                lip = lip.max((values[x] - values[y]).abs() / d);
            }
        }
    }
    Ok(lip)
}

/// Monte Carlo probabilities of the transfer events
/// A_n = {|S_n - W_n| >= eps sqrt(n)/2} u {|Z_n - psi(X_n)| >= eps sqrt(n)/2};
/// both reduce to oscillations of chi, so on bounded state spaces they are
/// exactly zero past n* = ceil((2 osc(chi) / eps)^2).
#[allow(clippy::too_many_arguments)]
pub fn check_borel_cantelli(
    kernel: &TransitionKernel,
    corrector: &Corrector,
    initial: &InitialDistribution,
    eps: f64,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
    delta: f64,
) -> Result<ConditionReport> {
    if eps <= 0.0 {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    if n_grid.is_empty() || replicas == 0 {
        return Err(Error::Invalid("need a grid and replicas".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let max_n = *grid.last().unwrap();
    let bounded_space = !matches!(kernel.space.kind, SpaceKind::Line);
    let osc = corrector.chi_oscillation()?;
    let cutoff = if bounded_space {
        Some((((2.0 * osc / eps).powi(2) + 1e-9).floor() as usize) + 1)
    } else {
        None
    };

    let counts: Vec<u64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut stream = Stream::new(seed, Purpose::Audit, r as u64);
            let mut x = initial.sample(&kernel.space, &mut stream)?;
            let chi0 = corrector.chi(&x)?;
            let mut chi_prev = chi0;
            let mut hits = vec![0u64; grid.len()];
            let mut gi = 0usize;
            for step in 1..=max_n {
                x = kernel.step(&x, &mut stream)?;
                let chi_x = corrector.chi(&x)?;
                if gi < grid.len() && grid[gi] == step {
                    let thresh = eps * (step as f64).sqrt() / 2.0;
                    if (chi_x - chi0).abs() >= thresh || (chi_x - chi_prev).abs() >= thresh {
                        hits[gi] = 1;
                    }
                    gi += 1;
                }
                chi_prev = chi_x;
            }
            Ok(hits)
        })
        .collect::<Result<Vec<Vec<u64>>>>()?
        .into_iter()
        .fold(vec![0u64; grid.len()], |mut acc, hits| {
            for (a, h) in acc.iter_mut().zip(&hits) {
                *a += h;
            }
            acc
        });

    let probs: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / replicas as f64)
        .collect();
    // Majorant proportional to n^{-(1+delta/2)}, pinned at the first
    // nonzero estimate.
    let majorant_c = grid
        .iter()
        .zip(&probs)
        .find(|(_, &p)| p > 0.0)
        .map(|(&n, &p)| p * (n as f64).powf(1.0 + delta / 2.0));
    let rows: Vec<DiagnosticRow> = grid
        .iter()
        .zip(&probs)
        .map(|(&n, &p)| {
            let bound = match cutoff {
                Some(c) if n >= c => 0.0,
                _ => majorant_c
                    .map(|mc| mc * (n as f64).powf(-(1.0 + delta / 2.0)))
                    .unwrap_or(0.0),
            };
            DiagnosticRow {
                n: n as u64,
                value: p,
                bound,
            }
        })
        .collect();

    let (verdict, note) = match cutoff {
        Some(c) => {
            let beyond: Vec<&DiagnosticRow> = rows.iter().filter(|r| r.n as usize >= c).collect();
            let all_zero = beyond.iter().all(|r| r.value == 0.0);
            if beyond.is_empty() {
                (
                    Verdict::Inconclusive,
                    format!("no grid points beyond the oscillation cutoff n* = {c}"),
                )
            } else if all_zero {
                (
                    Verdict::Pass,
                    format!("P(A_n) = 0 observed for every grid n >= n* = {c}"),
                )
            } else {
                (Verdict::Fail, format!("nonzero P(A_n) beyond n* = {c}"))
            }
        }
        None => {
            let pts: Vec<(f64, f64)> = grid
                .iter()
                .zip(&probs)
                .filter(|(_, &p)| p > 0.0)
                .map(|(&n, &p)| ((n as f64).ln(), p.ln()))
                .collect();
            if pts.len() < 3 {
                (
                    Verdict::Inconclusive,
                    format!("only {} nonzero estimates; cannot fit decay", pts.len()),
                )
            } else {
                let slope = fit_slope(&pts);
                if slope <= -1.05 {
                    (Verdict::Pass, format!("fitted log-log slope {slope:.3}"))
                } else {
                    (
                        Verdict::Fail,
                        format!("fitted log-log slope {slope:.3} > -1.05"),
                    )
                }
            }
        }
    };
    Ok(ConditionReport {
        id: "bc".into(),
        params: serde_json::json!({
            "eps": eps, "replicas": replicas, "seed": seed, "delta": delta,
            "chi_oscillation": osc, "cutoff": cutoff,
        }),
        diagnostics: rows,
        verdict,
        note,
    })
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::{corrector_finite, stationary_finite};
    use crate::kernel::{simulate_replica, NoiseKind};
    use crate::martingale::{decompose, gaussian_control_series, sigma2_corrector};
    use crate::observable::Observable;
    use crate::oracle;
    use crate::wasserstein::certify_contraction;

    fn two_state() -> TransitionKernel {
        TransitionKernel::finite(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    fn oracle_setup() -> (TransitionKernel, Corrector, f64, ContractionCertificate) {
        let k = two_state();
        let psi = Observable::table(vec![1.0, -2.0], &k.space).unwrap();
        let mu = stationary_finite(&k).unwrap();
        let cert =
            certify_contraction(&k, &[(State::Index(0), State::Index(1))], &[1, 2, 4, 8], 0, 0)
                .unwrap();
        let corr = corrector_finite(&k, &psi, &mu, Some(&cert)).unwrap();
        let sigma2 = sigma2_corrector(&k, &corr, &mu, 0, 0).unwrap().sigma2;
        (k, corr, sigma2, cert)
    }

    fn control_ensemble(replicas: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..replicas)
            .map(|r| gaussian_control_series(n, seed, r as u64).z)
            .collect()
    }

    #[test]
    fn e1_e2_zero_differences_pass() {
        let z = vec![vec![0.0; 100]; 32];
        let s2: Vec<f64> = (1..=100).map(|n| n as f64).collect();
        let reports = check_e1_e2(&z, &s2, 1.0, 1.0, &[0.5], None).unwrap();
        for r in reports {
            assert_eq!(r.verdict, Verdict::Pass, "{}", r.id);
        }
    }

    #[test]
    fn e1_gaussian_control_converges_with_small_tail() {
        let z = control_ensemble(512, 10_000, 11);
        let s2: Vec<f64> = (1..=10_000).map(|n| n as f64).collect();
        let exact_third = oracle::gaussian_abs_third_moment(1.0);
        let rep = check_e1(&z, &s2, 1.0, 1.0, Some(exact_third)).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.note);
        // E[Z^4 1_{|Z| < sqrt(n)}] <= 3: the partial sum stays below 3 zeta(2)
        // plus noise.
        let partial = rep.params["partial_sum"].as_f64().unwrap();
        assert!(partial < 6.0, "partial {partial}");
    }

    #[test]
    fn e2_gaussian_control_matches_tail_formula() {
        // At eps = 1 the summand is E[|Z| 1_{|Z| >= sqrt(n)}] / sqrt(n)
        // = 2 phi(sqrt(n)) / sqrt(n); the first few terms dominate.
        let z = control_ensemble(512, 10_000, 13);
        let s2: Vec<f64> = (1..=10_000).map(|n| n as f64).collect();
        let rep = check_e2(&z, &s2, 1.0, 1.0, Some(oracle::gaussian_abs_third_moment(1.0))).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.note);
        let partial = rep.params["partial_sum"].as_f64().unwrap();
        let oracle_sum: f64 = (1..=30)
            .map(|n| oracle::gaussian_tail_abs_moment((n as f64).sqrt()) / (n as f64).sqrt())
            .sum();
        assert!(
            (partial - oracle_sum).abs() < 0.05,
            "partial {partial} vs oracle {oracle_sum}"
        );
    }

    #[test]
    fn e1_two_state_dominated_by_lemma_majorant() {
        let (k, corr, _sigma2, _) = oracle_setup();
        let n = 10_000;
        let replicas = 128;
        let z: Vec<Vec<f64>> = (0..replicas)
            .map(|r| {
                let traj = simulate_replica(
                    &k,
                    &InitialDistribution::FiniteWeights(vec![2.0 / 3.0, 1.0 / 3.0]),
                    n,
                    3,
                    r as u64,
                )
                .unwrap();
                decompose(&traj, &corr).unwrap().z
            })
            .collect();
        let s2 = crate::martingale::exact_s2_curve(&k, &corr, &[2.0 / 3.0, 1.0 / 3.0], n)
            .unwrap()[1..]
            .to_vec();
        let sup_exact = crate::martingale::exact_abs_z_moment_curve(
            &k,
            &corr,
            &[2.0 / 3.0, 1.0 / 3.0],
            3.0,
            64,
        )
        .unwrap()
        .into_iter()
        .fold(0.0f64, f64::max);
        let rep = check_e1(&z, &s2, 1.0, 1.0, Some(sup_exact)).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.note);
        // Per-term domination: partial <= gamma * sup E|Z|^3 * sum s_n^{-3}.
        let partial = rep.params["partial_sum"].as_f64().unwrap();
        let sup_m = rep.params["sup_z_moment"].as_f64().unwrap();
        let majorant: f64 = sup_m * s2.iter().map(|s| s.powf(-1.5)).sum::<f64>();
        assert!(partial <= majorant * (1.0 + 1e-9), "{partial} vs {majorant}");
    }

    #[test]
    fn e3_constant_differences() {
        let z = vec![1.5; 20_000];
        let rep = check_e3(&z, 2.25, 2).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        let rep = check_e3(&z, 1.0, 2).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
    }

    #[test]
    fn e3_two_state_and_control() {
        let (k, corr, sigma2, cert) = oracle_setup();
        let traj = simulate_replica(
            &k,
            &InitialDistribution::Dirac(State::Index(0)),
            200_000,
            5,
            0,
        )
        .unwrap();
        let ms = decompose(&traj, &corr).unwrap();
        let rep = check_e3(&ms.z, sigma2, cert.n0).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.note);
        let control = gaussian_control_series(100_000, 99, 0);
        let rep = check_e3(&control.z, 1.0, 2).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.note);
    }

    #[test]
    fn slln_passes_centered_and_detects_uncentered() {
        let (k, corr, sigma2, _) = oracle_setup();
        let traj = simulate_replica(
            &k,
            &InitialDistribution::Dirac(State::Index(0)),
            100_000,
            7,
            0,
        )
        .unwrap();
        let ms = decompose(&traj, &corr).unwrap();
        let rep = check_slln(&ms.w, sigma2.sqrt()).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.note);
        // Shift psi by 0.5: W_n / n -> 0.5, detected as a failure.
        let shifted: Vec<f64> = ms
            .w
            .iter()
            .enumerate()
            .map(|(i, w)| w + 0.5 * i as f64)
            .collect();
        let rep = check_slln(&shifted, sigma2.sqrt()).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        // Zero observable passes trivially.
        let rep = check_slln(&vec![0.0; 20_001], sigma2.sqrt()).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
    }

    #[test]
    fn slln_gaussian_control_passes() {
        let control = gaussian_control_series(100_000, 123, 1);
        let rep = check_slln(&control.w, 1.0).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.note);
    }

    #[test]
    fn lemma_audit_two_state() {
        let (k, corr, sigma2, cert) = oracle_setup();
        let audit = audit_h_lipschitz(&k, &corr, sigma2, 1, 1, &cert, None, None).unwrap();
        assert!(audit.pass);
        // Bound = L * 1.7 / 0.51 with L = 2 (7 + 3)(1 + 34/3).
        let l = 2.0 * (7.0 + 3.0) * (1.0 + 34.0 / 3.0);
        assert!((audit.lemma_l - l).abs() < 1e-9);
        assert!((audit.analytic_bound - l * 1.7 / 0.51).abs() < 1e-6);
        assert!(audit.measured_h <= audit.analytic_bound);
        // Integration against kernels does not amplify beyond the integrand.
        assert!(audit.measured_h <= audit.measured_g + 1e-12);
        // g is clamped to [0, 1], so H has oscillation at most 1.
        assert!(audit.measured_h <= 1.0 + 1e-12);
    }

    #[test]
    fn lemma_audit_zero_observable_is_flat() {
        let k = two_state();
        let psi = Observable::table(vec![0.0, 0.0], &k.space).unwrap();
        let mu = stationary_finite(&k).unwrap();
        let cert =
            certify_contraction(&k, &[(State::Index(0), State::Index(1))], &[1, 2, 4], 0, 0)
                .unwrap();
        let corr = corrector_finite(&k, &psi, &mu, Some(&cert)).unwrap();
        // g is constant (only sigma2 terms), so H is constant too.
        let audit = audit_h_lipschitz(&k, &corr, 0.5, 1, 1, &cert, None, None).unwrap();
        assert!(audit.measured_h < 1e-12);
        assert!(audit.pass);
    }

    #[test]
    fn lemma_audit_rejects_corrupted_certificate() {
        let (k, corr, sigma2, mut cert) = oracle_setup();
        cert.gamma0 = 1.2;
        assert!(audit_h_lipschitz(&k, &corr, sigma2, 1, 1, &cert, None, None).is_err());
    }

    #[test]
    fn lemma_audit_rejects_large_instance() {
        let (k, corr, sigma2, cert) = oracle_setup();
        assert!(audit_h_lipschitz(&k, &corr, sigma2, 2, 2, &cert, None, None).is_err());
    }

    #[test]
    fn borel_cantelli_two_state_exact_zero_past_cutoff() {
        let (k, corr, _, _) = oracle_setup();
        // osc(chi) = 7, eps = 1: |chi(X_n) - chi(X_0)| can equal 7 exactly,
        // so the cutoff sits strictly past (2 * 7)^2 = 196.
        let grid = [50, 100, 196, 250, 400, 800];
        let rep = check_borel_cantelli(
            &k,
            &corr,
            &InitialDistribution::Dirac(State::Index(0)),
            1.0,
            &grid,
            10_000,
            21,
            1.0,
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.note);
        let cutoff = rep.params["cutoff"].as_u64().unwrap();
        assert_eq!(cutoff, 197);
        for row in &rep.diagnostics {
            if row.n >= cutoff {
                assert_eq!(row.value, 0.0, "P(A_{}) > 0", row.n);
            }
        }
    }

    #[test]
    fn borel_cantelli_trivial_for_huge_eps() {
        let (k, corr, _, _) = oracle_setup();
        // eps > 2 osc(chi): every probability is zero.
        let rep = check_borel_cantelli(
            &k,
            &corr,
            &InitialDistribution::Dirac(State::Index(0)),
            15.0,
            &[1, 2, 4, 8],
            2_000,
            3,
            1.0,
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!(rep.diagnostics.iter().all(|r| r.value == 0.0));
    }

    #[test]
    fn borel_cantelli_ar_slope() {
        // AR(1) with a = 0.5 and unit normal noise: chi is unbounded and the
        // grid probabilities decay faster than n^{-1.05}.
        let k = TransitionKernel::ar1(0.5, NoiseKind::Gaussian { sd: 1.0 }, 1.0).unwrap();
        let psi = Observable::affine(1.0, 0.0);
        let cert = certify_contraction(
            &k,
            &[(State::Real(-2.0), State::Real(2.0))],
            &[1, 2, 4, 8],
            4_000,
            5,
        )
        .unwrap();
        let corr = crate::corrector::scalar_grid_corrector(&k, &psi, &cert, 1024).unwrap();
        let sd = (4.0f64 / 3.0).sqrt();
        let rep = check_borel_cantelli(
            &k,
            &corr,
            &InitialDistribution::Gaussian { mean: 0.0, sd },
            1.0,
            &[4, 8, 16, 32, 64],
            20_000,
            31,
            1.0,
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass, "{}", rep.note);
    }

    #[test]
    fn reports_are_bit_reproducible() {
        let (k, corr, sigma2, cert) = oracle_setup();
        let run = || {
            let traj = simulate_replica(
                &k,
                &InitialDistribution::Dirac(State::Index(0)),
                20_000,
                5,
                0,
            )
            .unwrap();
            let ms = decompose(&traj, &corr).unwrap();
            let rep = check_e3(&ms.z, sigma2, cert.n0).unwrap();
            serde_json::to_string(&rep).unwrap()
        };
        assert_eq!(run(), run());
    }
}
