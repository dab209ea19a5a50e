//! Lipschitz observables on a state space.

use crate::error::{Error, Result};
use crate::rng::{Purpose, Stream};
use crate::space::{SpaceKind, State, StateSpace};
use serde::{Deserialize, Serialize};

/// Evaluation rule before centering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ObservableRule {
    /// One value per state of a finite space.
    Table(Vec<f64>),
    /// slope * x + intercept on scalar spaces.
    Affine { slope: f64, intercept: f64 },
}

/// A Lipschitz function psi with a declared constant and a centering offset;
/// psi(x) = rule(x) - offset. The offset is chosen so that <psi, mu*> = 0
/// once the stationary measure is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub rule: ObservableRule,
    pub lipschitz: f64,
    pub offset: f64,
}

impl Observable {
    /// Table observable on a finite space with the Lipschitz constant
    /// computed against the space metric.
    pub fn table(values: Vec<f64>, space: &StateSpace) -> Result<Self> {
        let m = space
            .finite_size()
            .ok_or_else(|| Error::Invalid("table observable needs a finite space".into()))?;
        if values.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: values.len(),
            });
        }
        let mut lip: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let d = space.rho(&State::Index(i), &State::Index(j))?;
                if d > 0.0 {
                    lip = lip.max((values[i] - values[j]).abs() / d);
                }
            }
        }
        Ok(Observable {
            rule: ObservableRule::Table(values),
            lipschitz: if lip > 0.0 { lip } else { 1.0 },
            offset: 0.0,
        })
    }

    pub fn affine(slope: f64, intercept: f64) -> Self {
        Observable {
            rule: ObservableRule::Affine { slope, intercept },
            lipschitz: slope.abs().max(f64::MIN_POSITIVE),
            offset: 0.0,
        }
    }

    /// psi(x) = x - 1/2, the canonical observable of the dyadic IFS.
    pub fn centered_identity() -> Self {
        Observable::affine(1.0, -0.5)
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn eval(&self, x: &State) -> Result<f64> {
        let raw = match (&self.rule, x) {
            (ObservableRule::Table(v), State::Index(i)) => {
                *v.get(*i).ok_or(Error::DomainError {
                    state: format!("{i}"),
                    reason: "index beyond observable table".into(),
                })?
            }
            (ObservableRule::Affine { slope, intercept }, State::Real(x)) => slope * x + intercept,
            _ => {
                return Err(Error::DomainError {
                    state: format!("{x}"),
                    reason: "observable rule does not match state kind".into(),
                })
            }
        };
        Ok(raw - self.offset)
    }

    /// Centered values over all states of a finite space.
    pub fn table_values(&self, space: &StateSpace) -> Result<Vec<f64>> {
        let m = space
            .finite_size()
            .ok_or_else(|| Error::Invalid("not a finite space".into()))?;
        (0..m).map(|i| self.eval(&State::Index(i))).collect()
    }
}

/// Empirical Lipschitz constant: max of |psi(x)-psi(y)| / rho(x,y) over
/// sampled distinct pairs. Zero-distance pairs are skipped; if every sampled
/// pair is degenerate the estimate fails.
pub fn estimate_lipschitz(
    obs: &Observable,
    space: &StateSpace,
    probe_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if probe_pairs == 0 {
        return Err(Error::Invalid("probe_pairs must be >= 1".into()));
    }
    let mut stream = Stream::new(seed, Purpose::Probe, 0);
    let mut best: Option<f64> = None;
    let sample_state = |stream: &mut Stream| -> Result<State> {
        Ok(match &space.kind {
            SpaceKind::Finite { size, .. } => State::Index(stream.next_u64() as usize % size),
            SpaceKind::Interval { lo, hi } => State::Real(lo + (hi - lo) * stream.next_f64()),
            SpaceKind::Line => State::Real(4.0 * stream.next_gaussian()),
        })
    };
    for _ in 0..probe_pairs {
        let x = sample_state(&mut stream)?;
        let y = sample_state(&mut stream)?;
        let d = space.rho(&x, &y)?;
        if d == 0.0 {
            continue;
        }
        let ratio = (obs.eval(&x)? - obs.eval(&y)?).abs() / d;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or_else(|| Error::Estimation("all probe pairs were degenerate".into()))
}
