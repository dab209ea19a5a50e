//! Rescaled polygonal paths and Strassen-set diagnostics.
//!
//! `build_theta` rescales raw partial sums W_k = sum_{i<=k} psi(X_i) into a
//! continuous path on [0,1] normalized by sigma sqrt(2 n log log n);
//! `build_eta` does the same for the martingale S_k on the variance-time
//! grid t_k = s_k^2 / s_n^2 (or natural time). The cluster tracker follows
//! scalar functionals of these paths along a subsequence and their sup-norm
//! distance to the unit-energy set K; maxima over K are 1 for the endpoint
//! and the supremum, 1/sqrt(3) for the integral.

use crate::error::{Error, Result};
use crate::taut;
use crate::util::log_log;
use serde::{Deserialize, Serialize};

/// A continuous piecewise-linear function on [0, 1] pinned at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonalPath {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    /// Horizon the path was built from (0 for synthetic paths).
    pub n: u64,
    /// Which denominator produced it.
    pub normalization: String,
}

impl PolygonalPath {
    pub fn new(t: Vec<f64>, v: Vec<f64>, n: u64, normalization: &str) -> Result<Self> {
        if t.len() != v.len() || t.len() < 2 {
            return Err(Error::Invalid("path needs matching t/v with >= 2 points".into()));
        }
        if t[0] != 0.0 || (t[t.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid("breakpoints must span [0, 1]".into()));
        }
        if t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("breakpoints must be strictly increasing".into()));
        }
        if v[0] != 0.0 {
            return Err(Error::Invalid("path must start at 0".into()));
        }
        Ok(PolygonalPath {
            t,
            v,
            n,
            normalization: normalization.to_string(),
        })
    }

    pub fn zero(n: u64) -> Self {
        PolygonalPath {
            t: vec![0.0, 1.0],
            v: vec![0.0, 0.0],
            n,
            normalization: "zero".into(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|&x| x == 0.0)
    }

    /// Linear interpolation at any t in [0, 1].
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match self.t.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(i) => self.v[i],
            Err(i) => {
                let (a, b) = (i - 1, i.min(self.t.len() - 1));
                let frac = (t - self.t[a]) / (self.t[b] - self.t[a]);
                self.v[a] + frac * (self.v[b] - self.v[a])
            }
        }
    }

    /// Drop interior vertices down to at most `max_vertices`, returning the
    /// thinned path and the exact sup-norm gap to the original.
    pub fn thin(&self, max_vertices: usize) -> Result<(PolygonalPath, f64)> {
        let m = self.t.len();
        if max_vertices < 2 {
            return Err(Error::Invalid("need at least 2 vertices".into()));
        }
        if m <= max_vertices {
            return Ok((self.clone(), 0.0));
        }
        let stride = m.div_ceil(max_vertices);
        let mut idx: Vec<usize> = (0..m).step_by(stride).collect();
        if *idx.last().unwrap() != m - 1 {
            idx.push(m - 1);
        }
        let t: Vec<f64> = idx.iter().map(|&i| self.t[i]).collect();
        let v: Vec<f64> = idx.iter().map(|&i| self.v[i]).collect();
        let thinned = PolygonalPath::new(t, v, self.n, &self.normalization)?;
        let mut gap = 0.0f64;
        for i in 0..m {
            gap = gap.max((thinned.eval(self.t[i]) - self.v[i]).abs());
        }
        Ok((thinned, gap))
    }
}

/// g(s) = sup{k >= 1 : s_k^2 <= s} (0 when none); s2[k-1] holds s_k^2.
pub fn variance_time_index(s2: &[f64], s: f64) -> usize {
    s2.iter().take_while(|&&x| x <= s).count()
}

/// Path of the raw psi-sums: vertices at t = k/n with values
/// W_k / (sigma sqrt(2 n log log n)); the zero path for n <= e.
pub fn build_theta(w: &[f64], sigma: f64, n: usize) -> Result<PolygonalPath> {
    if w.len() < n + 1 {
        return Err(Error::LengthMismatch {
            expected: n + 1,
            got: w.len(),
        });
    }
    if sigma <= 0.0 {
        return Err(Error::DegenerateVariance { sigma2: sigma * sigma });
    }
    if (n as f64) <= std::f64::consts::E {
        return Ok(PolygonalPath::zero(n as u64));
    }
    let denom = sigma * (2.0 * n as f64 * log_log(n as f64)).sqrt();
    let t: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let v: Vec<f64> = (0..=n).map(|k| w[k] / denom).collect();
    PolygonalPath::new(t, v, n as u64, "sigma-sqrt-2n-loglog-n")
}

/// Denominator variant for the martingale path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaVariant {
    /// sqrt(2 s_n^2 log log s_n^2)
    VarianceTime,
    /// sigma sqrt(2 n log log n)
    SigmaN { sigma: f64 },
}

/// Path of the martingale on the variance-time grid: vertex k at
/// t_k = s_k^2 / s_n^2 with value S_k / denominator. Zero path while
/// s_n^2 <= e (variance-time) or n <= e (natural time).
pub fn build_eta(z: &[f64], s2: &[f64], n: usize, variant: EtaVariant) -> Result<PolygonalPath> {
    if z.len() < n || s2.len() < n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: z.len().min(s2.len()),
        });
    }
    if n == 0 {
        return Ok(PolygonalPath::zero(0));
    }
    for k in 1..n {
        if s2[k] <= s2[k - 1] {
            return Err(Error::NonMonotoneVariance { index: k });
        }
    }
    if s2[0] <= 0.0 {
        return Err(Error::NonMonotoneVariance { index: 0 });
    }
    let sn2 = s2[n - 1];
    let denom = match variant {
        EtaVariant::VarianceTime => {
            if sn2 <= std::f64::consts::E {
                return Ok(PolygonalPath::zero(n as u64));
            }
            (2.0 * sn2 * log_log(sn2)).sqrt()
        }
        EtaVariant::SigmaN { sigma } => {
            if sigma <= 0.0 {
                return Err(Error::DegenerateVariance { sigma2: sigma * sigma });
            }
            if (n as f64) <= std::f64::consts::E {
                return Ok(PolygonalPath::zero(n as u64));
            }
            sigma * (2.0 * n as f64 * log_log(n as f64)).sqrt()
        }
    };
    let mut t = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n + 1);
    t.push(0.0);
    v.push(0.0);
    let mut s_running = 0.0;
    for k in 1..=n {
        s_running += z[k - 1];
        t.push(s2[k - 1] / sn2);
        v.push(s_running / denom);
    }
    let label = match variant {
        EtaVariant::VarianceTime => "sqrt-2sn2-loglog-sn2",
        EtaVariant::SigmaN { .. } => "sigma-sqrt-2n-loglog-n",
    };
    PolygonalPath::new(t, v, n as u64, label)
}

/// Energy sum (Delta v)^2 / Delta t; the path is in K iff energy <= 1.
pub fn path_energy(p: &PolygonalPath) -> f64 {
    taut::polyline_energy(&p.t, &p.v)
}

/// Sup-norm distance between two paths, exact over the merged breakpoints.
pub fn sup_distance(p: &PolygonalPath, q: &PolygonalPath) -> f64 {
    let mut best = 0.0f64;
    for &t in p.t.iter().chain(q.t.iter()) {
        best = best.max((p.eval(t) - q.eval(t)).abs());
    }
    best
}

/// Distance from the path to the unit-energy set K within +-tol.
pub fn dist_to_k(p: &PolygonalPath, tol: f64) -> Result<f64> {
    taut::dist_to_k(&p.t, &p.v, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathFunctional {
    Endpoint,
    Supremum,
    Integral,
}

/// Exact functional of a piecewise-linear path: value at 1, supremum over
/// [0,1] (attained at a vertex), or the trapezoidal integral.
pub fn functional_eval(p: &PolygonalPath, which: PathFunctional) -> f64 {
    match which {
        PathFunctional::Endpoint => *p.v.last().unwrap(),
        PathFunctional::Supremum => p.v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        PathFunctional::Integral => p
            .t
            .windows(2)
            .zip(p.v.windows(2))
            .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
            .sum(),
    }
}

/// Maxima of the tracked functionals over K (endpoint, supremum, integral).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FunctionalTargets {
    pub endpoint: f64,
    pub sup: f64,
    pub integral: f64,
}

impl Default for FunctionalTargets {
    fn default() -> Self {
        FunctionalTargets {
            endpoint: 1.0,
            sup: 1.0,
            integral: 1.0 / 3.0f64.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub n: u64,
    pub endpoint: f64,
    pub sup: f64,
    pub integral: f64,
    pub energy: f64,
    pub dist_to_k: f64,
}

/// Accumulated limsup diagnostics along an evaluation subsequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrassenReport {
    pub n_list: Vec<u64>,
    pub records: Vec<ClusterRecord>,
    pub running_max_endpoint: f64,
    pub running_max_sup: f64,
    pub running_max_integral: f64,
    /// min of dist_to_K over the most recent `window` subsequence points.
    pub min_recent_dist: f64,
    pub window: usize,
    pub targets: FunctionalTargets,
    pub dist_tol: f64,
}

/// Single-writer fold over an ordered stream of paths.
#[derive(Debug, Clone)]
pub struct ClusterTracker {
    records: Vec<ClusterRecord>,
    targets: FunctionalTargets,
    dist_tol: f64,
    window: usize,
}

impl ClusterTracker {
    pub fn new(targets: FunctionalTargets, dist_tol: f64, window: usize) -> Self {
        ClusterTracker {
            records: Vec::new(),
            targets,
            dist_tol,
            window: window.max(1),
        }
    }

    /// Evaluate every functional from the path itself.
    pub fn push(&mut self, n: u64, path: &PolygonalPath) -> Result<()> {
        let endpoint = functional_eval(path, PathFunctional::Endpoint);
        let sup = functional_eval(path, PathFunctional::Supremum);
        let integral = functional_eval(path, PathFunctional::Integral);
        self.push_precomputed(n, endpoint, sup, integral, path)
    }

    /// Record externally computed (exact) functionals, using the given path
    /// (possibly thinned) only for the distance evaluation.
    pub fn push_precomputed(
        &mut self,
        n: u64,
        endpoint: f64,
        sup: f64,
        integral: f64,
        path_for_dist: &PolygonalPath,
    ) -> Result<()> {
        if let Some(last) = self.records.last() {
            if n <= last.n {
                return Err(Error::Invalid(format!(
                    "subsequence must increase: {n} after {}",
                    last.n
                )));
            }
        }
        let dist = taut::dist_to_k(&path_for_dist.t, &path_for_dist.v, self.dist_tol)?;
        self.records.push(ClusterRecord {
            n,
            endpoint,
            sup,
            integral,
            energy: path_energy(path_for_dist),
            dist_to_k: dist,
        });
        Ok(())
    }

    pub fn report(&self) -> Result<StrassenReport> {
        if self.records.is_empty() {
            return Err(Error::Invalid("empty path stream".into()));
        }
        let max_by = |f: fn(&ClusterRecord) -> f64| {
            self.records.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
        };
        let recent = &self.records[self.records.len().saturating_sub(self.window)..];
        Ok(StrassenReport {
            n_list: self.records.iter().map(|r| r.n).collect(),
            records: self.records.clone(),
            running_max_endpoint: max_by(|r| r.endpoint),
            running_max_sup: max_by(|r| r.sup),
            running_max_integral: max_by(|r| r.integral),
            min_recent_dist: recent
                .iter()
                .map(|r| r.dist_to_k)
                .fold(f64::INFINITY, f64::min),
            window: self.window,
            targets: self.targets,
            dist_tol: self.dist_tol,
        })
    }
}

/// CSV export (t, value) of a path.
pub fn write_path_csv<W: std::io::Write>(p: &PolygonalPath, mut w: W) -> Result<()> {
    writeln!(w, "t,value")?;
    for (t, v) in p.t.iter().zip(&p.v) {
        writeln!(w, "{t},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_path(slope: f64) -> PolygonalPath {
        PolygonalPath::new(vec![0.0, 1.0], vec![0.0, slope], 0, "test").unwrap()
    }

    fn tent_path() -> PolygonalPath {
        PolygonalPath::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 0.0], 0, "test").unwrap()
    }

    #[test]
    fn theta_zero_cases() {
        // All-zero sums give the zero path; n <= e gives the zero path.
        let w = vec![0.0; 11];
        let p = build_theta(&w, 1.0, 10).unwrap();
        assert!(p.is_zero());
        let p = build_theta(&[0.0, 1.0, 2.0], 1.0, 2).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn theta_matches_displayed_formula() {
        // Increments [1, 1, -2, 1], sigma = 1, n = 4: at t = 1/2 the path
        // equals W_2 / sqrt(8 log log 4).
        let w = vec![0.0, 1.0, 2.0, 0.0, 1.0];
        let p = build_theta(&w, 1.0, 4).unwrap();
        let expected = 2.0 / (8.0 * log_log(4.0)).sqrt();
        assert!((p.eval(0.5) - expected).abs() < 1e-12, "{} vs {expected}", p.eval(0.5));
        // Interior t reproduces W_k + (nt - k) psi_{k+1} scaled.
        let t = 0.6; // k = 2, nt - k = 0.4, psi_3 = -2
        let expected_interior = (2.0 + 0.4 * (-2.0)) / (8.0 * log_log(4.0)).sqrt();
        assert!((p.eval(t) - expected_interior).abs() < 1e-12);
    }

    #[test]
    fn theta_endpoint_is_full_sum() {
        let (a, b, c) = (0.4, -0.3, 0.9);
        let w = vec![0.0, a, a + b, a + b + c];
        let sigma = 0.7;
        let p = build_theta(&w, sigma, 3).unwrap();
        let expected = (a + b + c) / (sigma * (6.0 * log_log(3.0)).sqrt());
        assert!((p.eval(1.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn eta_zero_and_error_cases() {
        let p = build_eta(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0], 3, EtaVariant::VarianceTime)
            .unwrap();
        assert!(p.is_zero() || p.v.iter().all(|&v| v == 0.0));
        // Non-monotone s2 is rejected.
        assert!(matches!(
            build_eta(&[1.0, 1.0], &[2.0, 2.0], 2, EtaVariant::VarianceTime),
            Err(Error::NonMonotoneVariance { .. })
        ));
        // s_n^2 <= e gives the zero path.
        let p = build_eta(&[1.0, -1.0], &[1.0, 2.0], 2, EtaVariant::VarianceTime).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn eta_hand_computed_example() {
        // Z = [1, -1, 2], s2 = [1, 2, 6]: vertices at t = (1/6, 2/6, 1) with
        // values (1, 0, 2) / sqrt(12 log log 6).
        let p = build_eta(&[1.0, -1.0, 2.0], &[1.0, 2.0, 6.0], 3, EtaVariant::VarianceTime)
            .unwrap();
        let denom = (12.0 * log_log(6.0)).sqrt();
        assert!((p.t[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!((p.t[2] - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(p.t[3], 1.0);
        assert!((p.v[1] - 1.0 / denom).abs() < 1e-12);
        assert!(p.v[2].abs() < 1e-12);
        assert!((p.v[3] - 2.0 / denom).abs() < 1e-12);
        // Spot values against the quoted approximation.
        assert!((p.v[1] - 0.378).abs() < 1e-3);
        assert!((p.v[3] - 0.756).abs() < 1e-3);
    }

    #[test]
    fn eta_and_theta_agree_for_iid_grid() {
        // With sigma^2 = 1 and s_k^2 = k the variance-time grid is uniform
        // and both constructions give the same path.
        let z = [0.5, -1.0, 0.25, 0.75, -0.5, 1.0, 0.3, -0.2];
        let n = z.len();
        let s2: Vec<f64> = (1..=n).map(|k| k as f64).collect();
        let mut w = vec![0.0];
        for (k, &zk) in z.iter().enumerate() {
            w.push(w[k] + zk);
        }
        let eta = build_eta(&z, &s2, n, EtaVariant::VarianceTime).unwrap();
        let theta = build_theta(&w, 1.0, n).unwrap();
        assert!(sup_distance(&eta, &theta) < 1e-12);
    }

    #[test]
    fn energy_examples() {
        assert!((path_energy(&line_path(1.0)) - 1.0).abs() < 1e-15);
        assert!((path_energy(&line_path(2.0)) - 4.0).abs() < 1e-15);
        assert!((path_energy(&tent_path()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn functional_examples() {
        let id = line_path(1.0);
        assert_eq!(functional_eval(&id, PathFunctional::Endpoint), 1.0);
        assert_eq!(functional_eval(&id, PathFunctional::Supremum), 1.0);
        assert!((functional_eval(&id, PathFunctional::Integral) - 0.5).abs() < 1e-15);
        let tent = tent_path();
        assert_eq!(functional_eval(&tent, PathFunctional::Endpoint), 0.0);
        assert_eq!(functional_eval(&tent, PathFunctional::Supremum), 0.5);
        assert!((functional_eval(&tent, PathFunctional::Integral) - 0.25).abs() < 1e-15);
        let zero = PolygonalPath::zero(0);
        assert_eq!(functional_eval(&zero, PathFunctional::Endpoint), 0.0);
        assert_eq!(functional_eval(&zero, PathFunctional::Supremum), 0.0);
        assert_eq!(functional_eval(&zero, PathFunctional::Integral), 0.0);
    }

    #[test]
    fn sup_distance_examples() {
        let id = line_path(1.0);
        assert_eq!(sup_distance(&id, &id), 0.0);
        assert_eq!(sup_distance(&id, &PolygonalPath::zero(0)), 1.0);
        assert_eq!(sup_distance(&id, &line_path(2.0)), 1.0);
    }

    #[test]
    fn dist_to_k_consistency_with_energy() {
        assert_eq!(dist_to_k(&line_path(1.0), 1e-7).unwrap(), 0.0);
        let d = dist_to_k(&line_path(2.0), 1e-7).unwrap();
        assert!((d - 1.0).abs() < 1e-6);
    }

    #[test]
    fn integral_target_path_is_extremal() {
        // x(t) = sqrt(3) (t - t^2/2) has energy 1 and integral 1/sqrt(3).
        let m = 2000;
        let t: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        let v: Vec<f64> = t.iter().map(|&x| 3.0f64.sqrt() * (x - x * x / 2.0)).collect();
        let p = PolygonalPath::new(t, v, 0, "extremal").unwrap();
        assert!(path_energy(&p) <= 1.0 + 1e-5);
        let integral = functional_eval(&p, PathFunctional::Integral);
        assert!((integral - 1.0 / 3.0f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn thinning_reports_exact_gap() {
        let m = 1000;
        let t: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        let v: Vec<f64> = t.iter().map(|&x| (6.0 * x).sin() * 0.3).collect();
        let mut v = v;
        v[0] = 0.0;
        let p = PolygonalPath::new(t, v, 0, "test").unwrap();
        let (thin, gap) = p.thin(64).unwrap();
        assert!(thin.t.len() <= 65);
        let observed = sup_distance(&p, &thin);
        assert!(observed <= gap + 1e-12, "observed {observed} gap {gap}");
        assert!(gap < 0.01);
    }

    #[test]
    fn tracker_zero_paths() {
        let mut tracker = ClusterTracker::new(FunctionalTargets::default(), 1e-6, 10);
        for (i, n) in [16u64, 24, 36].iter().enumerate() {
            tracker.push(*n, &PolygonalPath::zero(16 + i as u64)).unwrap();
        }
        let rep = tracker.report().unwrap();
        assert_eq!(rep.running_max_endpoint, 0.0);
        assert_eq!(rep.min_recent_dist, 0.0);
    }

    #[test]
    fn tracker_sees_identity_path_hit_target() {
        let mut tracker = ClusterTracker::new(FunctionalTargets::default(), 1e-6, 10);
        tracker.push(16, &PolygonalPath::zero(16)).unwrap();
        tracker.push(24, &line_path(1.0)).unwrap();
        let rep = tracker.report().unwrap();
        assert!((rep.running_max_endpoint - rep.targets.endpoint).abs() < 1e-12);
    }

    #[test]
    fn tracker_rejects_non_increasing_subsequence() {
        let mut tracker = ClusterTracker::new(FunctionalTargets::default(), 1e-6, 10);
        tracker.push(16, &PolygonalPath::zero(16)).unwrap();
        assert!(tracker.push(16, &PolygonalPath::zero(16)).is_err());
    }

    #[test]
    fn variance_time_index_matches_definition() {
        let s2 = [0.5, 1.0, 2.0, 2.9, 4.0];
        assert_eq!(variance_time_index(&s2, std::f64::consts::E), 3);
        assert_eq!(variance_time_index(&s2, 0.4), 0);
        assert_eq!(variance_time_index(&s2, 100.0), 5);
    }
}
