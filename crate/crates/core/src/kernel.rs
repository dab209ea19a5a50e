//! Transition kernels and trajectory simulation.
//!
//! Three kernel families are supported: finite row-stochastic matrices,
//! iterated function systems of contractive affine maps, and scalar AR(1)
//! recursions. Each `step` consumes exactly one draw from its stream, so a
//! trajectory is a pure function of (kernel, initial distribution, seed).

use crate::error::{Error, Result};
use crate::rng::{Purpose, Stream};
use crate::space::{SpaceKind, State, StateSpace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic transition matrix over a finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteKernel {
    pub rows: Vec<Vec<f64>>,
}

impl FiniteKernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::Invalid("empty transition matrix".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Invalid(format!("row {i} has wrong length")));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::Invalid(format!("negative probability in row {i}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Invalid(format!(
                    "row {i} sums to {sum}, expected 1 within {ROW_SUM_TOL:e}"
                )));
            }
        }
        Ok(FiniteKernel { rows })
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    /// Pf(x) = sum_y P(x,y) f(y), one value per state.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.size() {
            return Err(Error::LengthMismatch {
                expected: self.size(),
                got: f.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| row.iter().zip(f).map(|(p, v)| p * v).sum())
            .collect())
    }

    /// Distribution evolution: (mu P)(y) = sum_x mu(x) P(x,y).
    pub fn evolve(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.size() {
            return Err(Error::LengthMismatch {
                expected: self.size(),
                got: mu.len(),
            });
        }
        let m = self.size();
        let mut out = vec![0.0; m];
        for (x, &w) in mu.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for y in 0..m {
                out[y] += w * self.rows[x][y];
            }
        }
        Ok(out)
    }
}

/// One affine map of an iterated function system: x -> scale*x + offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }
}

/// Iterated function system: pick map j with probability probs[j], apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IfsKernel {
    pub maps: Vec<AffineMap>,
    pub probs: Vec<f64>,
}

impl IfsKernel {
    pub fn new(maps: Vec<AffineMap>, probs: Vec<f64>) -> Result<Self> {
        if maps.is_empty() || maps.len() != probs.len() {
            return Err(Error::Invalid("maps/probs length mismatch".into()));
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::Invalid("negative selection probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Invalid(format!("probabilities sum to {sum}")));
        }
        for (j, m) in maps.iter().enumerate() {
            if m.scale.abs() >= 1.0 {
                return Err(Error::Invalid(format!(
                    "map {j} has contraction ratio {} >= 1",
                    m.scale.abs()
                )));
            }
        }
        Ok(IfsKernel { maps, probs })
    }

    /// Mean contraction ratio sum_j p_j |scale_j|, a valid (H2) gamma for the
    /// synchronous coupling.
    pub fn mean_contraction(&self) -> f64 {
        self.maps
            .iter()
            .zip(&self.probs)
            .map(|(m, p)| p * m.scale.abs())
            .sum()
    }
}

/// Noise distribution for the AR(1) kernel. Both families have all moments
/// finite, so the (2+delta) moment requirement holds for any delta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    Gaussian { sd: f64 },
    Uniform { half_width: f64 },
}

impl NoiseKind {
    pub fn sample(&self, stream: &mut Stream) -> f64 {
        match self {
            NoiseKind::Gaussian { sd } => sd * stream.next_gaussian(),
            NoiseKind::Uniform { half_width } => half_width * (2.0 * stream.next_f64() - 1.0),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            NoiseKind::Gaussian { sd } => sd * sd,
            NoiseKind::Uniform { half_width } => half_width * half_width / 3.0,
        }
    }
}

/// Scalar recursion X_{n+1} = coefficient * X_n + noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArKernel {
    pub coefficient: f64,
    pub noise: NoiseKind,
}

impl ArKernel {
    pub fn new(coefficient: f64, noise: NoiseKind, delta: f64) -> Result<Self> {
        if coefficient.abs() >= 1.0 {
            return Err(Error::Invalid(format!(
                "AR coefficient {coefficient} must satisfy |a| < 1"
            )));
        }
        if delta <= 0.0 {
            return Err(Error::Invalid("delta must be positive".into()));
        }
        match noise {
            NoiseKind::Gaussian { sd } if !(sd > 0.0 && sd.is_finite()) => {
                return Err(Error::Invalid("gaussian noise needs sd > 0".into()))
            }
            NoiseKind::Uniform { half_width } if !(half_width > 0.0 && half_width.is_finite()) => {
                return Err(Error::Invalid("uniform noise needs half_width > 0".into()))
            }
            _ => {}
        }
        Ok(ArKernel { coefficient, noise })
    }

    /// Stationary variance coefficient^2-geometric series of the noise variance.
    pub fn stationary_variance(&self) -> f64 {
        self.noise.variance() / (1.0 - self.coefficient * self.coefficient)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelKind {
    Finite(FiniteKernel),
    Ifs(IfsKernel),
    Ar(ArKernel),
}

/// A transition kernel bound to its state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    pub space: StateSpace,
    pub kind: KernelKind,
}

impl TransitionKernel {
    pub fn finite(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = FiniteKernel::new(rows)?;
        let space = StateSpace::finite(k.size())?;
        Ok(TransitionKernel {
            space,
            kind: KernelKind::Finite(k),
        })
    }

    pub fn finite_on(space: StateSpace, rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = FiniteKernel::new(rows)?;
        if space.finite_size() != Some(k.size()) {
            return Err(Error::Invalid("space size does not match matrix".into()));
        }
        Ok(TransitionKernel {
            space,
            kind: KernelKind::Finite(k),
        })
    }

    /// IFS on an interval; every map must send the interval into itself.
    pub fn ifs(lo: f64, hi: f64, maps: Vec<AffineMap>, probs: Vec<f64>) -> Result<Self> {
        let k = IfsKernel::new(maps, probs)?;
        for (j, m) in k.maps.iter().enumerate() {
            for end in [lo, hi] {
                let y = m.apply(end);
                if y < lo - 1e-12 || y > hi + 1e-12 {
                    return Err(Error::Invalid(format!(
                        "map {j} sends {end} to {y}, outside [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(TransitionKernel {
            space: StateSpace::interval(lo, hi)?,
            kind: KernelKind::Ifs(k),
        })
    }

    /// The canonical dyadic IFS on [0,1]: maps x/2 and x/2 + 1/2 with equal
    /// probability; its stationary law is uniform.
    pub fn dyadic_ifs() -> Self {
        TransitionKernel::ifs(
            0.0,
            1.0,
            vec![
                AffineMap { scale: 0.5, offset: 0.0 },
                AffineMap { scale: 0.5, offset: 0.5 },
            ],
            vec![0.5, 0.5],
        )
        .expect("dyadic IFS is valid")
    }

    pub fn ar1(coefficient: f64, noise: NoiseKind, delta: f64) -> Result<Self> {
        let k = ArKernel::new(coefficient, noise, delta)?;
        Ok(TransitionKernel {
            space: StateSpace::line(),
            kind: KernelKind::Ar(k),
        })
    }

    pub fn as_finite(&self) -> Option<&FiniteKernel> {
        match &self.kind {
            KernelKind::Finite(k) => Some(k),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_finite().is_some()
    }

    /// One transition from x; consumes exactly one stream draw per variant.
    pub fn step(&self, x: &State, stream: &mut Stream) -> Result<State> {
        self.space.check_state(x)?;
        match (&self.kind, x) {
            (KernelKind::Finite(k), State::Index(i)) => {
                Ok(State::Index(stream.next_index(&k.rows[*i])))
            }
            (KernelKind::Ifs(k), State::Real(x)) => {
                let j = stream.next_index(&k.probs);
                Ok(State::Real(k.maps[j].apply(*x)))
            }
            (KernelKind::Ar(k), State::Real(x)) => {
                Ok(State::Real(k.coefficient * x + k.noise.sample(stream)))
            }
            _ => unreachable!("check_state guarantees matching kinds"),
        }
    }

    /// Synchronous coupling step: advance two chains with one shared draw.
    /// Used by empirical contraction certification; the shared randomness
    /// upper-bounds the Wasserstein distance between the two laws.
    pub fn step_coupled(&self, x: &State, y: &State, stream: &mut Stream) -> Result<(State, State)> {
        self.space.check_state(x)?;
        self.space.check_state(y)?;
        match &self.kind {
            KernelKind::Finite(k) => {
                let u = stream.next_f64();
                let pick = |row: &[f64]| -> usize {
                    let mut acc = 0.0;
                    for (i, &w) in row.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            return i;
                        }
                    }
                    row.len() - 1
                };
                Ok((
                    State::Index(pick(&k.rows[x.as_index()?])),
                    State::Index(pick(&k.rows[y.as_index()?])),
                ))
            }
            KernelKind::Ifs(k) => {
                let j = stream.next_index(&k.probs);
                Ok((
                    State::Real(k.maps[j].apply(x.as_real()?)),
                    State::Real(k.maps[j].apply(y.as_real()?)),
                ))
            }
            KernelKind::Ar(k) => {
                let xi = k.noise.sample(stream);
                Ok((
                    State::Real(k.coefficient * x.as_real()? + xi),
                    State::Real(k.coefficient * y.as_real()? + xi),
                ))
            }
        }
    }

    /// Pf for finite kernels: exact matrix-vector product.
    pub fn apply_p(&self, f: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            KernelKind::Finite(k) => k.apply(f),
            _ => Err(Error::Invalid(
                "apply_p requires a finite-matrix kernel".into(),
            )),
        }
    }

    /// Stable content hash of the kernel definition, recorded in exports.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("kernel serializes");
        let digest = Sha256::digest(json.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}

/// Initial distribution descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialDistribution {
    Dirac(State),
    /// Weights over the states of a finite space.
    FiniteWeights(Vec<f64>),
    /// Uniform on [lo, hi] for scalar spaces.
    Uniform { lo: f64, hi: f64 },
    /// Gaussian for line spaces.
    Gaussian { mean: f64, sd: f64 },
}

impl InitialDistribution {
    pub fn sample(&self, space: &StateSpace, stream: &mut Stream) -> Result<State> {
        match (self, &space.kind) {
            (InitialDistribution::Dirac(x), _) => {
                space.check_state(x)?;
                Ok(*x)
            }
            (InitialDistribution::FiniteWeights(w), SpaceKind::Finite { size, .. }) => {
                if w.len() != *size {
                    return Err(Error::UnsupportedInitial(format!(
                        "{} weights for {size} states",
                        w.len()
                    )));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL || w.iter().any(|&p| p < 0.0) {
                    return Err(Error::UnsupportedInitial("weights are not a distribution".into()));
                }
                Ok(State::Index(stream.next_index(w)))
            }
            (InitialDistribution::Uniform { lo, hi }, SpaceKind::Interval { .. })
            | (InitialDistribution::Uniform { lo, hi }, SpaceKind::Line) => {
                if !(lo < hi) {
                    return Err(Error::UnsupportedInitial(format!("bad uniform [{lo}, {hi}]")));
                }
                let x = State::Real(lo + (hi - lo) * stream.next_f64());
                space.check_state(&x)?;
                Ok(x)
            }
            (InitialDistribution::Gaussian { mean, sd }, SpaceKind::Line) => {
                Ok(State::Real(mean + sd * stream.next_gaussian()))
            }
            (d, _) => Err(Error::UnsupportedInitial(format!(
                "{d:?} is not supported on this space"
            ))),
        }
    }
}

/// A simulated state sequence X_0..X_n together with its provenance.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub seed: u64,
    pub kernel_hash: String,
    pub initial: InitialDistribution,
}

impl Trajectory {
    pub fn len_steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// Simulate n steps: X_0 ~ initial, then X_{k+1} ~ pi(X_k, .).
pub fn simulate(
    kernel: &TransitionKernel,
    initial: &InitialDistribution,
    n: usize,
    seed: u64,
) -> Result<Trajectory> {
    simulate_replica(kernel, initial, n, seed, 0)
}

/// Simulate with an explicit replica id; replicas get independent streams.
pub fn simulate_replica(
    kernel: &TransitionKernel,
    initial: &InitialDistribution,
    n: usize,
    seed: u64,
    replica: u64,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(n + 1);
    simulate_visit(kernel, initial, n, seed, replica, |_, x| states.push(*x))?;
    Ok(Trajectory {
        states,
        seed,
        kernel_hash: kernel.hash(),
        initial: initial.clone(),
    })
}

/// Streaming simulation for long horizons: the visitor sees (step index,
/// state) for k = 0..=n without the trajectory being stored.
pub fn simulate_visit<F: FnMut(usize, &State)>(
    kernel: &TransitionKernel,
    initial: &InitialDistribution,
    n: usize,
    seed: u64,
    replica: u64,
    mut visit: F,
) -> Result<()> {
    let mut stream = Stream::new(seed, Purpose::Simulation, replica);
    let mut x = initial.sample(&kernel.space, &mut stream)?;
    visit(0, &x);
    for k in 1..=n {
        x = kernel.step(&x, &mut stream)?;
        visit(k, &x);
    }
    Ok(())
}

/// Export a trajectory as CSV with a header line recording the seed and
/// kernel hash, then (step, state) rows.
pub fn write_trajectory_csv<W: std::io::Write>(traj: &Trajectory, mut w: W) -> Result<()> {
    writeln!(w, "# seed={} kernel_hash={}", traj.seed, traj.kernel_hash)?;
    writeln!(w, "step,state")?;
    for (k, x) in traj.states.iter().enumerate() {
        writeln!(w, "{},{}", k, x.value())?;
    }
    Ok(())
}
