//! Martingale decomposition and variance estimation.
//!
//! A trajectory plus a corrector yields the differences
//! Z_n = chi(X_n) - chi(X_{n-1}) + psi(X_n) = h(X_n) - Ph(X_{n-1}),
//! the martingale S_n = sum Z_k, and the raw partial sums
//! W_n = sum_{i=1..n} psi(X_i). The asymptotic variance sigma^2 = E_{mu*}
//! Z_1^2 is computed two independent ways (conditional-variance formula and
//! the autocovariance series) so each route checks the other.

use crate::corrector::{Corrector, StationaryMeasure};
use crate::error::{Error, Result};
use crate::kernel::{InitialDistribution, Trajectory, TransitionKernel};
use crate::observable::Observable;
use crate::rng::{Purpose, Stream};
use crate::util::{mean, pairwise_sum, standard_error};
use crate::verdict::{ConditionReport, DiagnosticRow, Verdict};
use crate::wasserstein::ContractionCertificate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEGENERATE_SIGMA2: f64 = 1e-12;

/// Martingale differences and partial sums built from one trajectory.
#[derive(Debug, Clone)]
pub struct MartingaleSeries {
    /// Z_1..Z_n (index k-1 holds Z_k).
    pub z: Vec<f64>,
    /// S_0..S_n with S_0 = 0 and S_k - S_{k-1} = Z_k exactly.
    pub s: Vec<f64>,
    /// W_0..W_n with W_k = sum_{i=1..k} psi(X_i).
    pub w: Vec<f64>,
    pub source: String,
}

impl MartingaleSeries {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Build the decomposition under the canonical convention.
pub fn decompose(traj: &Trajectory, corrector: &Corrector) -> Result<MartingaleSeries> {
    if traj.kernel_hash != corrector.kernel_hash {
        return Err(Error::Invalid(format!(
            "corrector was built for kernel {}, trajectory for {}",
            corrector.kernel_hash, traj.kernel_hash
        )));
    }
    let n = traj.len_steps();
    let psi = &corrector.observable;
    let mut z = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n + 1);
    let mut w = Vec::with_capacity(n + 1);
    s.push(0.0);
    w.push(0.0);
    for k in 1..=n {
        let zk = corrector.difference(&traj.states[k - 1], &traj.states[k])?;
        z.push(zk);
        s.push(s[k - 1] + zk);
        w.push(w[k - 1] + psi.eval(&traj.states[k])?);
    }
    Ok(MartingaleSeries {
        z,
        s,
        w,
        source: format!("kernel:{}/seed:{}", traj.kernel_hash, traj.seed),
    })
}

/// Synthetic i.i.d. N(0,1) differences: the control channel. Every
/// downstream statistic can be run on it to validate the harness itself
/// (here W = S, s_k^2 = k and sigma^2 = 1).
pub fn gaussian_control_series(n: usize, seed: u64, replica: u64) -> MartingaleSeries {
    let mut stream = Stream::new(seed, Purpose::Variance, replica).substream(0xC0);
    let mut z = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n + 1);
    s.push(0.0);
    for k in 1..=n {
        let g = stream.next_gaussian();
        z.push(g);
        s.push(s[k - 1] + g);
    }
    MartingaleSeries {
        z,
        w: s.clone(),
        s,
        source: format!("gaussian-control/seed:{seed}/replica:{replica}"),
    }
}

/// CSV export (n, Z_n, S_n, W_n) of a martingale series.
pub fn write_martingale_csv<W: std::io::Write>(ms: &MartingaleSeries, w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    writer
        .write_record(["n", "Z", "S", "W"])
        .map_err(|e| Error::Estimation(e.to_string()))?;
    for k in 1..=ms.len() {
        writer
            .write_record([
                k.to_string(),
                ms.z[k - 1].to_string(),
                ms.s[k].to_string(),
                ms.w[k].to_string(),
            ])
            .map_err(|e| Error::Estimation(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a series back from the CSV layout written above.
pub fn read_martingale_csv<R: std::io::Read>(r: R) -> Result<MartingaleSeries> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut z = Vec::new();
    let mut s = vec![0.0];
    let mut w = vec![0.0];
    for record in reader.records() {
        let record = record.map_err(|e| Error::Estimation(e.to_string()))?;
        if record.len() < 4 {
            return Err(Error::Estimation("martingale CSV needs n,Z,S,W columns".into()));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse()
                .map_err(|_| Error::Estimation(format!("bad number {:?}", &record[i])))
        };
        z.push(parse(1)?);
        s.push(parse(2)?);
        w.push(parse(3)?);
    }
    if z.is_empty() {
        return Err(Error::Estimation("empty martingale CSV".into()));
    }
    Ok(MartingaleSeries {
        z,
        s,
        w,
        source: "csv".into(),
    })
}

/// Per-state conditional mean and variance of Z given X_{n-1} = x, exact via
/// apply_P on finite chains.
pub fn conditional_z_stats(
    kernel: &TransitionKernel,
    corrector: &Corrector,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let fk = kernel
        .as_finite()
        .ok_or_else(|| Error::Invalid("conditional stats need a finite kernel".into()))?;
    let m = fk.size();
    let h: Vec<f64> = (0..m)
        .map(|i| corrector.h(&crate::space::State::Index(i)))
        .collect::<Result<_>>()?;
    let h2: Vec<f64> = h.iter().map(|v| v * v).collect();
    let ph = fk.apply(&h)?;
    let ph2 = fk.apply(&h2)?;
    let means = vec![0.0; m]
        .iter()
        .enumerate()
        .map(|(x, _)| {
            // E[Z | X = x] = Ph(x) - Ph(x) = 0; computed literally as a residual.
            let ez: f64 = (0..m).map(|y| fk.rows[x][y] * (h[y] - ph[x])).sum();
            ez
        })
        .collect();
    let vars = (0..m).map(|x| ph2[x] - ph[x] * ph[x]).collect();
    Ok((means, vars))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMethod {
    CorrectorExact,
    CorrectorMc,
    GreenKubo,
    BatchMeans,
}

/// sigma^2 with its provenance and, when estimated from an ensemble, the
/// cumulative second-moment curve s_n^2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma2: f64,
    pub method: VarianceMethod,
    pub std_error: f64,
    pub sample_size: usize,
    /// Rows (n, s_n^2 / n, reference sigma^2) where available.
    pub s_curve: Vec<DiagnosticRow>,
}

fn check_degenerate(sigma2: f64) -> Result<f64> {
    if sigma2 < DEGENERATE_SIGMA2 {
        Err(Error::DegenerateVariance { sigma2 })
    } else {
        Ok(sigma2)
    }
}

/// sigma^2 = E_{mu*} Z_1^2 via the corrector: exact conditional-variance sum
/// on finite chains, stationary-start Monte Carlo otherwise.
pub fn sigma2_corrector(
    kernel: &TransitionKernel,
    corrector: &Corrector,
    mu_star: &StationaryMeasure,
    mc_replicas: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    if kernel.is_finite() {
        let weights = mu_star.finite_weights(kernel.as_finite().unwrap().size())?;
        let (_, vars) = conditional_z_stats(kernel, corrector)?;
        let sigma2: f64 = weights.iter().zip(&vars).map(|(w, v)| w * v).sum();
        return Ok(VarianceEstimate {
            sigma2: check_degenerate(sigma2)?,
            method: VarianceMethod::CorrectorExact,
            std_error: 0.0,
            sample_size: weights.len(),
            s_curve: Vec::new(),
        });
    }
    let StationaryMeasure::Empirical { samples, .. } = mu_star else {
        return Err(Error::Invalid(
            "samplable kernel needs an empirical stationary measure".into(),
        ));
    };
    if samples.is_empty() || mc_replicas == 0 {
        return Err(Error::Invalid("need samples and replicas".into()));
    }
    let z2: Vec<f64> = (0..mc_replicas)
        .into_par_iter()
        .map(|r| {
            let mut stream = Stream::new(seed, Purpose::Variance, r as u64);
            let x0 = crate::space::State::Real(
                samples[(stream.next_u64() % samples.len() as u64) as usize],
            );
            let x1 = kernel.step(&x0, &mut stream)?;
            let z = corrector.difference(&x0, &x1)?;
            Ok(z * z)
        })
        .collect::<Result<Vec<f64>>>()?;
    let sigma2 = mean(&z2);
    Ok(VarianceEstimate {
        sigma2: check_degenerate(sigma2)?,
        method: VarianceMethod::CorrectorMc,
        std_error: standard_error(&z2),
        sample_size: mc_replicas,
        s_curve: Vec::new(),
    })
}

/// Independent route: sigma^2 = Var_{mu*}(psi) + 2 sum_{k>=1} Cov_{mu*}(psi(X_0), psi(X_k)).
/// Exact powers of P on finite chains; autocovariances of a long stationary
/// run otherwise (standard error by batch means over 16 segments).
pub fn sigma2_green_kubo(
    kernel: &TransitionKernel,
    psi: &Observable,
    mu_star: &StationaryMeasure,
    lag_cutoff: Option<usize>,
    cert: Option<&ContractionCertificate>,
    sample_len: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    let cutoff = match (lag_cutoff, cert) {
        (Some(k), _) => k,
        (None, Some(c)) => {
            // c gamma^cutoff / (1 - gamma) < 1e-12
            let mut k = 1usize;
            while c.c * c.gamma.powi(k as i32) / (1.0 - c.gamma) >= 1e-12 && k < 100_000 {
                k += 1;
            }
            k
        }
        (None, None) => return Err(Error::MissingCertificate),
    };
    if kernel.is_finite() {
        let fk = kernel.as_finite().unwrap();
        let weights = mu_star.finite_weights(fk.size())?;
        let psi_vals = psi.table_values(&kernel.space)?;
        let var0: f64 = weights
            .iter()
            .zip(&psi_vals)
            .map(|(w, v)| w * v * v)
            .sum();
        let mut sigma2 = var0;
        let mut pk = psi_vals.clone();
        for _ in 1..=cutoff {
            pk = fk.apply(&pk)?;
            let cov: f64 = weights
                .iter()
                .zip(&psi_vals)
                .zip(&pk)
                .map(|((w, v), p)| w * v * p)
                .sum();
            sigma2 += 2.0 * cov;
        }
        return Ok(VarianceEstimate {
            sigma2: check_degenerate(sigma2)?,
            method: VarianceMethod::GreenKubo,
            std_error: 0.0,
            sample_size: fk.size(),
            s_curve: Vec::new(),
        });
    }
    // Sampled route: one long run, batch-means standard error.
    if sample_len < 100 * (cutoff + 1) {
        return Err(Error::Invalid(format!(
            "sample length {sample_len} too short for lag cutoff {cutoff}"
        )));
    }
    let init = crate::corrector::default_initial(kernel);
    let burn = 1000;
    let mut values = Vec::with_capacity(sample_len);
    crate::kernel::simulate_visit(kernel, &init, burn + sample_len, seed, 0, |k, x| {
        if k >= burn {
            values.push(psi.eval(x).unwrap_or(f64::NAN));
        }
    })?;
    let batches = 16;
    let batch_len = values.len() / batches;
    let per_batch: Vec<f64> = (0..batches)
        .map(|b| green_kubo_from_series(&values[b * batch_len..(b + 1) * batch_len], cutoff))
        .collect();
    let sigma2 = green_kubo_from_series(&values, cutoff);
    Ok(VarianceEstimate {
        sigma2: check_degenerate(sigma2)?,
        method: VarianceMethod::GreenKubo,
        std_error: standard_error(&per_batch),
        sample_size: sample_len,
        s_curve: Vec::new(),
    })
}

fn green_kubo_from_series(values: &[f64], cutoff: usize) -> f64 {
    let n = values.len();
    let m = mean(values);
    let centered: Vec<f64> = values.iter().map(|v| v - m).collect();
    let mut sigma2 = 0.0;
    for k in 0..=cutoff.min(n - 1) {
        let prods: Vec<f64> = (0..n - k).map(|i| centered[i] * centered[i + k]).collect();
        let cov = pairwise_sum(&prods) / (n - k) as f64;
        sigma2 += if k == 0 { cov } else { 2.0 * cov };
    }
    sigma2
}

/// Ensemble estimate of the cumulative variance curve s_n^2 = E S_n^2,
/// reported as s_n^2 / n at grid points against a reference sigma^2.
pub fn variance_curve(
    series: &[MartingaleSeries],
    grid: &[usize],
    sigma2_ref: f64,
) -> Result<VarianceEstimate> {
    if series.len() < 2 {
        return Err(Error::Invalid("variance curve needs >= 2 replicas".into()));
    }
    let n = series.iter().map(|s| s.len()).min().unwrap();
    let mut rows = Vec::new();
    let mut final_ratio = f64::NAN;
    let mut final_se = f64::NAN;
    for &g in grid.iter().filter(|&&g| g >= 1 && g <= n) {
        let s2_samples: Vec<f64> = series.iter().map(|ms| ms.s[g] * ms.s[g]).collect();
        let s2 = mean(&s2_samples);
        rows.push(DiagnosticRow {
            n: g as u64,
            value: s2 / g as f64,
            bound: sigma2_ref,
        });
        final_ratio = s2 / g as f64;
        final_se = standard_error(&s2_samples) / g as f64;
    }
    Ok(VarianceEstimate {
        sigma2: final_ratio,
        method: VarianceMethod::BatchMeans,
        std_error: final_se,
        sample_size: series.len(),
        s_curve: rows,
    })
}

/// Exact E_{mu P^n} Z_1^2 for n = 0..=horizon on a finite chain: the
/// conditional variance integrated against the evolved law.
pub fn exact_z2_mean_curve(
    kernel: &TransitionKernel,
    corrector: &Corrector,
    initial_weights: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    let fk = kernel
        .as_finite()
        .ok_or_else(|| Error::Invalid("exact curve needs a finite kernel".into()))?;
    let (_, vars) = conditional_z_stats(kernel, corrector)?;
    let mut mu = initial_weights.to_vec();
    let mut out = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        out.push(mu.iter().zip(&vars).map(|(w, v)| w * v).sum());
        mu = fk.evolve(&mu)?;
    }
    Ok(out)
}

/// Exact E_mu |Z_n|^p for n = 1..=horizon on a finite chain: the conditional
/// absolute moment sum_y P(x,y) |Z(x->y)|^p integrated against mu P^{n-1}.
pub fn exact_abs_z_moment_curve(
    kernel: &TransitionKernel,
    corrector: &Corrector,
    initial_weights: &[f64],
    exponent: f64,
    horizon: usize,
) -> Result<Vec<f64>> {
    let fk = kernel
        .as_finite()
        .ok_or_else(|| Error::Invalid("exact moment curve needs a finite kernel".into()))?;
    let m = fk.size();
    let mut cond = vec![0.0; m];
    for (x, c) in cond.iter_mut().enumerate() {
        for y in 0..m {
            let z = corrector
                .difference(&crate::space::State::Index(x), &crate::space::State::Index(y))?;
            *c += fk.rows[x][y] * z.abs().powf(exponent);
        }
    }
    let mut mu = initial_weights.to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 1..=horizon {
        out.push(mu.iter().zip(&cond).map(|(w, v)| w * v).sum());
        mu = fk.evolve(&mu)?;
    }
    Ok(out)
}

/// Exact s_n^2 = sum_{i<=n} E_mu Z_i^2 on a finite chain.
pub fn exact_s2_curve(
    kernel: &TransitionKernel,
    corrector: &Corrector,
    initial_weights: &[f64],
    horizon: usize,
) -> Result<Vec<f64>> {
    let z2 = exact_z2_mean_curve(kernel, corrector, initial_weights, horizon)?;
    // E_mu Z_i^2 integrates the conditional variance against mu P^{i-1}.
    let mut s2 = Vec::with_capacity(horizon + 1);
    s2.push(0.0);
    for i in 1..=horizon {
        s2.push(s2[i - 1] + z2[i - 1]);
    }
    Ok(s2)
}

/// Monte Carlo check of the uniform (2+delta)-moment bound
/// sup_n E rho_{x0}^{2+delta}(X_n) < infinity: estimates on a horizon grid,
/// trend-bounded iff no estimate exceeds twice the median beyond three
/// standard errors.
pub fn moment_check_h3(
    kernel: &TransitionKernel,
    initial: &InitialDistribution,
    delta: f64,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<ConditionReport> {
    if delta <= 0.0 {
        return Err(Error::Invalid("delta must be positive".into()));
    }
    if n_grid.is_empty() || replicas < 2 {
        return Err(Error::Invalid("need a grid and >= 2 replicas".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let max_n = *grid.last().unwrap();
    let exponent = 2.0 + delta;
    // per_replica[r][g] = rho_{x0}(X_{n_g})^{2+delta}
    let per_replica: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut vals = Vec::with_capacity(grid.len());
            let mut gi = 0usize;
            crate::kernel::simulate_visit(kernel, initial, max_n, seed, r as u64, |k, x| {
                if gi < grid.len() && grid[gi] == k {
                    let rho = kernel.space.rho_ref(x).unwrap_or(f64::NAN);
                    vals.push(rho.powf(exponent));
                    gi += 1;
                }
            })?;
            Ok(vals)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut estimates = Vec::with_capacity(grid.len());
    let mut ses = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let col: Vec<f64> = per_replica.iter().map(|row| row[g]).collect();
        estimates.push(mean(&col));
        ses.push(standard_error(&col));
    }
    let mut sorted = estimates.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let mut rows = Vec::new();
    let mut trend_bounded = true;
    for (g, &n) in grid.iter().enumerate() {
        let bound = 2.0 * median + 3.0 * ses[g];
        if estimates[g] > bound {
            trend_bounded = false;
        }
        rows.push(DiagnosticRow {
            n: n as u64,
            value: estimates[g],
            bound,
        });
    }
    let max_est = estimates.iter().fold(0.0f64, |a, &b| a.max(b));
    let noisy = ses.iter().zip(&estimates).any(|(se, e)| *se > 0.5 * e.abs().max(1e-12));
    let verdict = if trend_bounded {
        Verdict::Pass
    } else if noisy {
        Verdict::Inconclusive
    } else {
        Verdict::Fail
    };
    Ok(ConditionReport {
        id: "H3".into(),
        params: serde_json::json!({
            "delta": delta, "replicas": replicas, "seed": seed, "max_estimate": max_est,
        }),
        diagnostics: rows,
        verdict,
        note: format!("max estimate {max_est:.6e}; trend-bounded: {trend_bounded}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrector::{corrector_finite, scalar_grid_corrector, stationary_finite};
    use crate::kernel::{simulate, NoiseKind};
    use crate::observable::Observable;
    use crate::space::State;
    use crate::wasserstein::certify_contraction;

    fn two_state() -> TransitionKernel {
        TransitionKernel::finite(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap()
    }

    fn setup_two_state() -> (TransitionKernel, Observable, Corrector, StationaryMeasure) {
        let k = two_state();
        let psi = Observable::table(vec![1.0, -2.0], &k.space).unwrap();
        let mu = stationary_finite(&k).unwrap();
        let corr = corrector_finite(&k, &psi, &mu, None).unwrap();
        (k, psi, corr, mu)
    }

    #[test]
    fn difference_table_values() {
        // h = (10/3, -20/3), Ph = 0.7 h: transitions 0->0 and 0->1.
        let (_, _, corr, _) = setup_two_state();
        let z00 = corr.difference(&State::Index(0), &State::Index(0)).unwrap();
        let z01 = corr.difference(&State::Index(0), &State::Index(1)).unwrap();
        assert!((z00 - 1.0).abs() < 1e-10);
        assert!((z01 + 9.0).abs() < 1e-10);
        let z10 = corr.difference(&State::Index(1), &State::Index(0)).unwrap();
        let z11 = corr.difference(&State::Index(1), &State::Index(1)).unwrap();
        assert!((z10 - 8.0).abs() < 1e-10);
        assert!((z11 + 2.0).abs() < 1e-10);
    }

    #[test]
    fn conditional_means_vanish_exactly() {
        let (k, _, corr, _) = setup_two_state();
        let (means, vars) = conditional_z_stats(&k, &corr).unwrap();
        // 0.9 * 1 + 0.1 * (-9) = 0 and per-state conditional variances 9, 16.
        for m in &means {
            assert!(m.abs() <= 1e-12, "conditional mean {m}");
        }
        assert!((vars[0] - 9.0).abs() < 1e-9);
        assert!((vars[1] - 16.0).abs() < 1e-9);
    }

    #[test]
    fn literal_sum_from_zero_convention_fails_martingale_property() {
        // Using chi0 = h (the sum-from-zero reading) in the difference
        // formula leaves residual |P psi - psi| > 0.1 per state.
        let (k, psi, corr, _) = setup_two_state();
        let m = 2;
        let h: Vec<f64> = (0..m).map(|i| corr.h(&State::Index(i)).unwrap()).collect();
        let psi_vals = psi.table_values(&k.space).unwrap();
        // Z0(x -> y) = h(y) - h(x) + psi(y); residual_x = sum_y P(x,y) Z0.
        let fk = k.as_finite().unwrap();
        let p_psi = fk.apply(&psi_vals).unwrap();
        for x in 0..m {
            let mut resid = 0.0;
            for y in 0..m {
                resid += fk.rows[x][y] * (h[y] - h[x] + psi_vals[y]);
            }
            assert!(
                resid.abs() > 0.1,
                "sum-from-zero residual unexpectedly small at {x}: {resid}"
            );
            // And it equals P psi - psi exactly.
            assert!((resid - (p_psi[x] - psi_vals[x])).abs() < 1e-10);
        }
    }

    #[test]
    fn decompose_is_exactly_telescoping() {
        let (k, _, corr, _) = setup_two_state();
        let traj = simulate(&k, &InitialDistribution::Dirac(State::Index(0)), 500, 9).unwrap();
        let ms = decompose(&traj, &corr).unwrap();
        assert_eq!(ms.s[0], 0.0);
        for i in 1..=ms.len() {
            assert_eq!(ms.s[i] - ms.s[i - 1], ms.z[i - 1]);
        }
        // S_n = chi(X_n) - chi(X_0) + W_n.
        let chi_n = corr.chi(traj.states.last().unwrap()).unwrap();
        let chi_0 = corr.chi(&traj.states[0]).unwrap();
        let last = ms.len();
        assert!((ms.s[last] - (chi_n - chi_0 + ms.w[last])).abs() < 1e-9);
    }

    #[test]
    fn decompose_zero_observable_gives_zero_differences() {
        let k = two_state();
        let psi = Observable::table(vec![0.0, 0.0], &k.space).unwrap();
        let mu = stationary_finite(&k).unwrap();
        let corr = corrector_finite(&k, &psi, &mu, None).unwrap();
        let traj = simulate(&k, &InitialDistribution::Dirac(State::Index(0)), 50, 2).unwrap();
        let ms = decompose(&traj, &corr).unwrap();
        assert!(ms.z.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn decompose_rejects_kernel_mismatch() {
        let (_, _, corr, _) = setup_two_state();
        let other = TransitionKernel::finite(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let traj = simulate(&other, &InitialDistribution::Dirac(State::Index(0)), 10, 1).unwrap();
        assert!(decompose(&traj, &corr).is_err());
    }

    #[test]
    fn sigma2_two_state_both_routes() {
        let (k, psi, corr, mu) = setup_two_state();
        let by_corr = sigma2_corrector(&k, &corr, &mu, 0, 0).unwrap();
        assert!((by_corr.sigma2 - 34.0 / 3.0).abs() < 1e-9);
        let by_gk = sigma2_green_kubo(&k, &psi, &mu, Some(200), None, 0, 0).unwrap();
        assert!((by_gk.sigma2 - 34.0 / 3.0).abs() < 1e-9);
        assert!((by_corr.sigma2 - by_gk.sigma2).abs() < 1e-9);
    }

    #[test]
    fn sigma2_iid_kernel_is_plain_variance() {
        // Rows equal to mu*: zero autocovariance at every positive lag.
        let k = TransitionKernel::finite(vec![vec![0.25, 0.75], vec![0.25, 0.75]]).unwrap();
        let mu = stationary_finite(&k).unwrap();
        let psi_raw = Observable::table(vec![1.0, 0.0], &k.space).unwrap();
        let psi = crate::corrector::center_observable(&psi_raw, &mu).unwrap();
        let gk = sigma2_green_kubo(&k, &psi, &mu, Some(50), None, 0, 0).unwrap();
        assert!((gk.sigma2 - 0.25 * 0.75).abs() < 1e-12);
    }

    #[test]
    fn sigma2_degenerate_for_zero_observable() {
        let k = two_state();
        let psi = Observable::table(vec![0.0, 0.0], &k.space).unwrap();
        let mu = stationary_finite(&k).unwrap();
        let corr = corrector_finite(&k, &psi, &mu, None).unwrap();
        assert!(matches!(
            sigma2_corrector(&k, &corr, &mu, 0, 0),
            Err(Error::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn sigma2_ifs_exact_quarter_via_grid() {
        let k = TransitionKernel::dyadic_ifs();
        let psi = Observable::centered_identity();
        let cert = certify_contraction(
            &k,
            &[(State::Real(0.0), State::Real(1.0))],
            &[1, 2, 4, 8],
            5_000,
            3,
        )
        .unwrap();
        let corr = scalar_grid_corrector(&k, &psi, &cert, 513).unwrap();
        let mu = crate::corrector::stationary_empirical(&k, 1000, 50_000, 7).unwrap();
        let est = sigma2_corrector(&k, &corr, &mu, 50_000, 21).unwrap();
        assert!(
            (est.sigma2 - 0.25).abs() < 0.01,
            "sigma2 {} (Z = +-1/2 for every state)",
            est.sigma2
        );
        let gk = sigma2_green_kubo(&k, &psi, &mu, None, Some(&cert), 400_000, 13).unwrap();
        assert!((gk.sigma2 - 0.25).abs() < 0.01, "green-kubo {}", gk.sigma2);
    }

    #[test]
    fn wlln_exact_curve_decays_geometrically() {
        // E_{mu P^n} Z_1^2 -> sigma^2 with |dev| <= C gamma0^{floor(n/n0)};
        // C fitted on the first half of the horizon, checked on all of it.
        let (k, _, corr, mu) = setup_two_state();
        let sigma2 = sigma2_corrector(&k, &corr, &mu, 0, 0).unwrap().sigma2;
        let curve = exact_z2_mean_curve(&k, &corr, &[1.0, 0.0], 100).unwrap();
        let cert =
            certify_contraction(&k, &[(State::Index(0), State::Index(1))], &[1, 2, 4, 8], 0, 0)
                .unwrap();
        let envelope = |n: usize| cert.gamma0.powi((n / cert.n0 as usize) as i32);
        let mut c_fit: f64 = 0.0;
        for (n, v) in curve.iter().enumerate().take(51) {
            c_fit = c_fit.max((v - sigma2).abs() / envelope(n));
        }
        for (n, v) in curve.iter().enumerate() {
            assert!(
                (v - sigma2).abs() <= c_fit * envelope(n) * (1.0 + 1e-9) + 1e-12,
                "n={n}"
            );
        }
        // Deviations decay to zero at the end of the horizon.
        assert!((curve[100] - sigma2).abs() < 1e-12);
    }

    #[test]
    fn s2_curve_is_nondecreasing_and_linear_in_the_limit() {
        let (k, _, corr, mu) = setup_two_state();
        let sigma2 = sigma2_corrector(&k, &corr, &mu, 0, 0).unwrap().sigma2;
        let s2 = exact_s2_curve(&k, &corr, &[1.0, 0.0], 2000).unwrap();
        assert!(s2.windows(2).all(|w| w[1] >= w[0]));
        assert!((s2[2000] / 2000.0 - sigma2).abs() / sigma2 < 0.01);
    }

    #[test]
    fn variance_curve_two_state_within_five_percent() {
        let (k, _, corr, mu) = setup_two_state();
        let sigma2 = sigma2_corrector(&k, &corr, &mu, 0, 0).unwrap().sigma2;
        let n = 20_000;
        let series: Vec<MartingaleSeries> = (0..64)
            .map(|r| {
                let traj = crate::kernel::simulate_replica(
                    &k,
                    &InitialDistribution::FiniteWeights(vec![2.0 / 3.0, 1.0 / 3.0]),
                    n,
                    777,
                    r,
                )
                .unwrap();
                decompose(&traj, &corr).unwrap()
            })
            .collect();
        let grid = crate::util::geometric_grid(100, 2.0, n);
        let est = variance_curve(&series, &grid, sigma2).unwrap();
        assert!(
            (est.sigma2 - sigma2).abs() / sigma2 < 0.05,
            "s_n^2/n = {} vs {}",
            est.sigma2,
            sigma2
        );
    }

    #[test]
    fn variance_curve_gaussian_control() {
        // S_n^2/n has relative standard error sqrt(2/R) for the control, so
        // 50k replicas put the 2% band at three standard errors.
        let series: Vec<MartingaleSeries> =
            (0..50_000).map(|r| gaussian_control_series(100, 4242, r)).collect();
        let grid = [10, 50, 100];
        let est = variance_curve(&series, &grid, 1.0).unwrap();
        assert!((est.sigma2 - 1.0).abs() < 0.02, "control {}", est.sigma2);
        // Zero differences give the zero curve.
        let zero = MartingaleSeries {
            z: vec![0.0; 100],
            s: vec![0.0; 101],
            w: vec![0.0; 101],
            source: "zero".into(),
        };
        let est0 = variance_curve(&[zero.clone(), zero], &[10, 100], 0.0).unwrap();
        assert_eq!(est0.sigma2, 0.0);
    }

    #[test]
    fn martingale_csv_roundtrip() {
        let (k, _, corr, _) = setup_two_state();
        let traj = simulate(&k, &InitialDistribution::Dirac(State::Index(0)), 200, 4).unwrap();
        let ms = decompose(&traj, &corr).unwrap();
        let mut buf = Vec::new();
        write_martingale_csv(&ms, &mut buf).unwrap();
        let back = read_martingale_csv(buf.as_slice()).unwrap();
        assert_eq!(ms.z, back.z);
        assert_eq!(ms.s, back.s);
        assert_eq!(ms.w, back.w);
    }

    #[test]
    fn h3_bounded_spaces_pass_trivially() {
        let k = two_state();
        let rep = moment_check_h3(
            &k,
            &InitialDistribution::Dirac(State::Index(0)),
            1.0,
            &[1, 10, 100],
            64,
            5,
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!(rep.diagnostics.iter().all(|d| d.value <= 1.0));
        let ifs = TransitionKernel::dyadic_ifs();
        let rep = moment_check_h3(
            &ifs,
            &InitialDistribution::Uniform { lo: 0.0, hi: 1.0 },
            1.0,
            &[1, 10, 100],
            64,
            5,
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!(rep.diagnostics.iter().all(|d| d.value <= 1.0));
    }

    #[test]
    fn h3_ar_stationary_start_matches_gaussian_moment() {
        // AR(1), a = 0.5, unit normal noise, delta = 1, stationary start:
        // E|X|^3 = 2 sqrt(2/pi) (4/3)^{3/2} at every horizon.
        let k = TransitionKernel::ar1(0.5, NoiseKind::Gaussian { sd: 1.0 }, 1.0).unwrap();
        let sd = (4.0f64 / 3.0).sqrt();
        let expected = crate::oracle::gaussian_abs_third_moment(4.0 / 3.0);
        let rep = moment_check_h3(
            &k,
            &InitialDistribution::Gaussian { mean: 0.0, sd },
            1.0,
            &[1, 4, 16, 64, 256],
            20_000,
            77,
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        for d in &rep.diagnostics {
            assert!(
                (d.value - expected).abs() < 0.15,
                "n={} estimate {} expected {expected}",
                d.n,
                d.value
            );
        }
    }

    #[test]
    fn uniform_z_moment_is_stable_on_grid() {
        // sup_n E|Z_n|^{2+delta} finite and stable for the oracle chain.
        let (k, _, corr, _) = setup_two_state();
        let grid = [10usize, 100, 1000];
        let replicas = 256;
        let mut estimates = Vec::new();
        for &n in &grid {
            let vals: Vec<f64> = (0..replicas)
                .map(|r| {
                    let traj = crate::kernel::simulate_replica(
                        &k,
                        &InitialDistribution::Dirac(State::Index(0)),
                        n,
                        31,
                        r,
                    )
                    .unwrap();
                    let ms = decompose(&traj, &corr).unwrap();
                    ms.z.last().unwrap().abs().powf(3.0)
                })
                .collect();
            estimates.push(mean(&vals));
        }
        // |Z| <= 9, so E|Z|^3 <= 729; stability: max within 3x min.
        let max = estimates.iter().cloned().fold(f64::MIN, f64::max);
        let min = estimates.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max <= 729.0);
        assert!(max / min < 3.0, "estimates {estimates:?}");
    }
}
