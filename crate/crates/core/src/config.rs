//! Experiment configuration: a sectioned key-value (TOML) file describing
//! the kernel, the observable, and every run parameter. Configs round-trip
//! through serialization unchanged and hash stably, so every artifact can
//! name the exact configuration that produced it.

use crate::error::{Error, Result};
use crate::kernel::{AffineMap, InitialDistribution, NoiseKind, TransitionKernel};
use crate::observable::Observable;
use crate::space::{State, StateSpace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelConfig {
    Finite {
        matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metric: Option<Vec<Vec<f64>>>,
    },
    Ifs {
        interval: [f64; 2],
        maps: Vec<MapConfig>,
        probs: Vec<f64>,
    },
    Ar1 {
        coefficient: f64,
        noise: NoiseConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub scale: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseConfig {
    Gaussian { sd: f64 },
    Uniform { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObservableConfig {
    Table {
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz: Option<f64>,
    },
    Affine {
        slope: f64,
        intercept: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialConfig {
    /// Start from the (exact or surrogate) stationary law.
    Stationary,
    Dirac { state: f64 },
    Weights { weights: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Stationary
    }
}

fn default_delta() -> f64 {
    1.0
}
fn default_n_max() -> usize {
    1_000_000
}
fn default_sub_start() -> usize {
    16
}
fn default_sub_ratio() -> f64 {
    1.5
}
fn default_replicas() -> usize {
    64
}
fn default_burn_in() -> usize {
    1_000
}
fn default_stationary_samples() -> usize {
    100_000
}
fn default_e12_horizon() -> usize {
    10_000
}
fn default_e12_replicas() -> usize {
    256
}
fn default_eps_grid() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_gamma_thresh() -> f64 {
    1.0
}
fn default_sigma2_mc() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Horizon of the LIL / path analysis.
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_sub_start")]
    pub subsequence_start: usize,
    #[serde(default = "default_sub_ratio")]
    pub subsequence_ratio: f64,
    /// Ensemble size for the variance curve.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_stationary_samples")]
    pub stationary_samples: usize,
    #[serde(default = "default_e12_horizon")]
    pub e12_horizon: usize,
    #[serde(default = "default_e12_replicas")]
    pub e12_replicas: usize,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_gamma_thresh")]
    pub gamma_thresh: f64,
    /// Stationary-start samples for the Monte Carlo sigma^2 route.
    #[serde(default = "default_sigma2_mc")]
    pub sigma2_mc_samples: usize,
    #[serde(default)]
    pub initial: InitialConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    #[serde(default = "CertifyConfig::default_horizons")]
    pub horizons: Vec<u32>,
    #[serde(default = "CertifyConfig::default_replicas")]
    pub replicas: usize,
    /// Start pairs: state indices for finite kernels, values otherwise.
    #[serde(default)]
    pub pairs: Vec<[f64; 2]>,
    /// Run gap-dependent stages with a conservative fallback certificate
    /// when certification fails.
    #[serde(default)]
    pub assume_gap: bool,
}

impl CertifyConfig {
    fn default_horizons() -> Vec<u32> {
        vec![1, 2, 4, 8]
    }
    fn default_replicas() -> usize {
        100_000
    }
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            horizons: Self::default_horizons(),
            replicas: Self::default_replicas(),
            pairs: Vec::new(),
            assume_gap: false,
        }
    }
}

fn default_dist_tol() -> f64 {
    1e-3
}
fn default_sigma2_agreement() -> f64 {
    1e-9
}
fn default_lil_band() -> [f64; 2] {
    [0.6, 1.4]
}
fn default_functional_band() -> [f64; 2] {
    [0.5, 1.25]
}
fn default_recent_dist_max() -> f64 {
    0.35
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default = "default_dist_tol")]
    pub dist_tol: f64,
    /// Exact-mode agreement between the two sigma^2 routes.
    #[serde(default = "default_sigma2_agreement")]
    pub sigma2_agreement: f64,
    /// Acceptance band for the running max of the LIL ratio.
    #[serde(default = "default_lil_band")]
    pub lil_band: [f64; 2],
    /// Band (as multiples of the target) for path-functional running maxima.
    #[serde(default = "default_functional_band")]
    pub functional_band: [f64; 2],
    /// Threshold on min dist-to-K over the last window of the subsequence.
    #[serde(default = "default_recent_dist_max")]
    pub recent_dist_max: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

fn default_checks() -> Vec<String> {
    ["e1", "e2", "e3", "h3", "slln", "bc", "lemma1", "lil", "strassen"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}
fn default_bc_eps() -> f64 {
    1.0
}
fn default_bc_replicas() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_checks")]
    pub enabled: Vec<String>,
    #[serde(default = "default_bc_eps")]
    pub bc_eps: f64,
    #[serde(default = "default_bc_replicas")]
    pub bc_replicas: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelConfig,
    pub observable: ObservableConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub checks: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub directory: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.delta <= 0.0 {
            return Err(Error::Config("run.delta must be positive".into()));
        }
        if r.n_max == 0 || r.replicas == 0 || r.e12_replicas == 0 || r.stationary_samples == 0 {
            return Err(Error::Config("counts must be positive".into()));
        }
        if r.subsequence_ratio <= 1.0 {
            return Err(Error::Config("subsequence ratio must exceed 1".into()));
        }
        if self.tolerances.dist_tol <= 0.0 || self.tolerances.sigma2_agreement <= 0.0 {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if r.eps_grid.iter().any(|&e| e <= 0.0) {
            return Err(Error::Config("eps grid must be positive".into()));
        }
        // Kernel/observable shape coherence is enforced by the builders.
        self.build_kernel()?;
        Ok(())
    }

    /// Stable hash of the config (canonical JSON of the parsed structure).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_kernel(&self) -> Result<TransitionKernel> {
        match &self.kernel {
            KernelConfig::Finite { matrix, metric } => match metric {
                None => TransitionKernel::finite(matrix.clone()),
                Some(m) => {
                    let space = StateSpace::finite_with_metric(matrix.len(), m.clone())?;
                    TransitionKernel::finite_on(space, matrix.clone())
                }
            },
            KernelConfig::Ifs {
                interval,
                maps,
                probs,
            } => TransitionKernel::ifs(
                interval[0],
                interval[1],
                maps.iter()
                    .map(|m| AffineMap {
                        scale: m.scale,
                        offset: m.offset,
                    })
                    .collect(),
                probs.clone(),
            ),
            KernelConfig::Ar1 { coefficient, noise } => {
                let noise = match noise {
                    NoiseConfig::Gaussian { sd } => NoiseKind::Gaussian { sd: *sd },
                    NoiseConfig::Uniform { half_width } => NoiseKind::Uniform {
                        half_width: *half_width,
                    },
                };
                TransitionKernel::ar1(*coefficient, noise, self.run.delta)
            }
        }
    }

    pub fn build_observable(&self, kernel: &TransitionKernel) -> Result<Observable> {
        match &self.observable {
            ObservableConfig::Table { values, lipschitz } => {
                let mut obs = Observable::table(values.clone(), &kernel.space)?;
                if let Some(l) = lipschitz {
                    if *l <= 0.0 {
                        return Err(Error::Config("lipschitz must be positive".into()));
                    }
                    obs.lipschitz = *l;
                }
                Ok(obs)
            }
            ObservableConfig::Affine { slope, intercept } => {
                if kernel.space.is_finite() {
                    return Err(Error::Config(
                        "affine observables need a scalar space".into(),
                    ));
                }
                Ok(Observable::affine(*slope, *intercept))
            }
        }
    }

    /// Start pairs for certification (defaults: extreme states/endpoints).
    pub fn certify_pairs(&self, kernel: &TransitionKernel) -> Result<Vec<(State, State)>> {
        if !self.certify.pairs.is_empty() {
            return self
                .certify
                .pairs
                .iter()
                .map(|[a, b]| {
                    Ok(if kernel.space.is_finite() {
                        (State::Index(*a as usize), State::Index(*b as usize))
                    } else {
                        (State::Real(*a), State::Real(*b))
                    })
                })
                .collect();
        }
        Ok(match &kernel.space.kind {
            crate::space::SpaceKind::Finite { size, .. } => {
                let mut pairs = Vec::new();
                for i in 0..*size {
                    for j in i + 1..*size {
                        pairs.push((State::Index(i), State::Index(j)));
                    }
                    if pairs.len() >= 16 {
                        break;
                    }
                }
                pairs
            }
            crate::space::SpaceKind::Interval { lo, hi } => {
                vec![(State::Real(*lo), State::Real(*hi))]
            }
            crate::space::SpaceKind::Line => {
                vec![(State::Real(-2.0), State::Real(2.0))]
            }
        })
    }

    /// Resolve the configured initial distribution against the kernel; the
    /// `stationary` choice maps to the exact stationary law where one is
    /// available in closed form, otherwise to a burn-in surrogate start.
    pub fn resolve_initial(
        &self,
        kernel: &TransitionKernel,
        stationary_weights: Option<&[f64]>,
    ) -> Result<InitialDistribution> {
        Ok(match &self.run.initial {
            InitialConfig::Dirac { state } => {
                if kernel.space.is_finite() {
                    InitialDistribution::Dirac(State::Index(*state as usize))
                } else {
                    InitialDistribution::Dirac(State::Real(*state))
                }
            }
            InitialConfig::Weights { weights } => {
                InitialDistribution::FiniteWeights(weights.clone())
            }
            InitialConfig::Uniform { lo, hi } => InitialDistribution::Uniform { lo: *lo, hi: *hi },
            InitialConfig::Gaussian { mean, sd } => InitialDistribution::Gaussian {
                mean: *mean,
                sd: *sd,
            },
            InitialConfig::Stationary => match (&kernel.space.kind, &kernel.kind) {
                (crate::space::SpaceKind::Finite { .. }, _) => {
                    let w = stationary_weights.ok_or_else(|| {
                        Error::Config("stationary start needs the stationary weights".into())
                    })?;
                    InitialDistribution::FiniteWeights(w.to_vec())
                }
                (_, crate::kernel::KernelKind::Ar(ar)) => InitialDistribution::Gaussian {
                    mean: 0.0,
                    sd: ar.stationary_variance().sqrt(),
                },
                (crate::space::SpaceKind::Interval { lo, hi }, _) => {
                    InitialDistribution::Uniform { lo: *lo, hi: *hi }
                }
                _ => {
                    return Err(Error::Config(
                        "no stationary surrogate for this kernel".into(),
                    ))
                }
            },
        })
    }
}

/// The two bundled demonstration configurations.
pub fn two_state_demo_toml(seed: u64) -> String {
    format!(
        r#"[kernel]
type = "finite"
matrix = [[0.9, 0.1], [0.2, 0.8]]

[observable]
type = "table"
values = [1.0, -2.0]

[run]
seed = {seed}
"#
    )
}

pub fn ifs_demo_toml(seed: u64) -> String {
    format!(
        r#"[kernel]
type = "ifs"
interval = [0.0, 1.0]
maps = [{{ scale = 0.5, offset = 0.0 }}, {{ scale = 0.5, offset = 0.5 }}]
probs = [0.5, 0.5]

[observable]
type = "affine"
slope = 1.0
intercept = -0.5

[run]
seed = {seed}
"#
    )
}
