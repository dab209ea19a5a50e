//! State spaces and their metrics.
//!
//! Finite spaces carry the discrete 0/1 metric by default (an optional metric
//! matrix can be supplied); scalar spaces use absolute difference. Every
//! space designates a reference point used by moment checks.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A point of a state space: an index for finite spaces, a real number for
/// scalar ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum State {
    Index(usize),
    Real(f64),
}

impl State {
    pub fn as_index(&self) -> Result<usize> {
        match self {
            State::Index(i) => Ok(*i),
            State::Real(x) => Err(Error::DomainError {
                state: format!("{x}"),
                reason: "expected a finite-space index".into(),
            }),
        }
    }

    pub fn as_real(&self) -> Result<f64> {
        match self {
            State::Real(x) => Ok(*x),
            State::Index(i) => Err(Error::DomainError {
                state: format!("{i}"),
                reason: "expected a scalar state".into(),
            }),
        }
    }

    /// Numeric value used for CSV export: index as f64 or the real value.
    pub fn value(&self) -> f64 {
        match self {
            State::Index(i) => *i as f64,
            State::Real(x) => *x,
        }
    }
}

impl std::fmt::Display for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            State::Index(i) => write!(f, "{i}"),
            State::Real(x) => write!(f, "{x}"),
        }
    }
}

/// Metric on a finite space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FiniteMetric {
    /// rho(x, y) = 1 if x != y, else 0.
    Discrete,
    /// User-supplied symmetric matrix with zero diagonal.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpaceKind {
    Finite { size: usize, metric: FiniteMetric },
    Interval { lo: f64, hi: f64 },
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub kind: SpaceKind,
    /// Reference point x0 for rho_{x0}(x) = rho(x0, x).
    pub reference: State,
}

impl StateSpace {
    pub fn finite(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Invalid("finite space must have >= 1 state".into()));
        }
        Ok(StateSpace {
            kind: SpaceKind::Finite {
                size,
                metric: FiniteMetric::Discrete,
            },
            reference: State::Index(0),
        })
    }

    pub fn finite_with_metric(size: usize, metric: Vec<Vec<f64>>) -> Result<Self> {
        if metric.len() != size || metric.iter().any(|r| r.len() != size) {
            return Err(Error::Invalid("metric matrix shape mismatch".into()));
        }
        let space = StateSpace {
            kind: SpaceKind::Finite {
                size,
                metric: FiniteMetric::Matrix(metric),
            },
            reference: State::Index(0),
        };
        space.validate_metric()?;
        Ok(space)
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Invalid(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(StateSpace {
            kind: SpaceKind::Interval { lo, hi },
            reference: State::Real(lo),
        })
    }

    pub fn line() -> Self {
        StateSpace {
            kind: SpaceKind::Line,
            reference: State::Real(0.0),
        }
    }

    pub fn with_reference(mut self, x0: State) -> Result<Self> {
        self.check_state(&x0)?;
        self.reference = x0;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.kind, SpaceKind::Finite { .. })
    }

    pub fn finite_size(&self) -> Option<usize> {
        match &self.kind {
            SpaceKind::Finite { size, .. } => Some(*size),
            _ => None,
        }
    }

    /// Validate that a state belongs to this space.
    pub fn check_state(&self, x: &State) -> Result<()> {
        match (&self.kind, x) {
            (SpaceKind::Finite { size, .. }, State::Index(i)) => {
                if i < size {
                    Ok(())
                } else {
                    Err(Error::DomainError {
                        state: format!("{i}"),
                        reason: format!("index out of range for {size} states"),
                    })
                }
            }
            (SpaceKind::Interval { lo, hi }, State::Real(x)) => {
                if *x >= *lo && *x <= *hi {
                    Ok(())
                } else {
                    Err(Error::DomainError {
                        state: format!("{x}"),
                        reason: format!("outside interval [{lo}, {hi}]"),
                    })
                }
            }
            (SpaceKind::Line, State::Real(x)) => {
                if x.is_finite() {
                    Ok(())
                } else {
                    Err(Error::DomainError {
                        state: format!("{x}"),
                        reason: "non-finite scalar state".into(),
                    })
                }
            }
            _ => Err(Error::DomainError {
                state: format!("{x}"),
                reason: "state kind does not match space kind".into(),
            }),
        }
    }

    /// The metric rho(x, y).
    pub fn rho(&self, x: &State, y: &State) -> Result<f64> {
        self.check_state(x)?;
        self.check_state(y)?;
        match (&self.kind, x, y) {
            (SpaceKind::Finite { metric, .. }, State::Index(i), State::Index(j)) => {
                Ok(match metric {
                    FiniteMetric::Discrete => {
                        if i == j {
                            0.0
                        } else {
                            1.0
                        }
                    }
                    FiniteMetric::Matrix(m) => m[*i][*j],
                })
            }
            (_, State::Real(a), State::Real(b)) => Ok((a - b).abs()),
            _ => unreachable!("check_state guarantees matching kinds"),
        }
    }

    /// Distance to the reference point.
    pub fn rho_ref(&self, x: &State) -> Result<f64> {
        self.rho(&self.reference.clone(), x)
    }

    /// Full metric matrix of a finite space.
    pub fn metric_matrix(&self) -> Result<Vec<Vec<f64>>> {
        match &self.kind {
            SpaceKind::Finite { size, metric } => Ok(match metric {
                FiniteMetric::Discrete => (0..*size)
                    .map(|i| (0..*size).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
                    .collect(),
                FiniteMetric::Matrix(m) => m.clone(),
            }),
            _ => Err(Error::Invalid("metric matrix only exists for finite spaces".into())),
        }
    }

    /// Symmetry, zero diagonal, nonnegativity and the triangle inequality on
    /// every triple (finite spaces only; scalar metrics hold by construction).
    pub fn validate_metric(&self) -> Result<()> {
        let SpaceKind::Finite { size, .. } = &self.kind else {
            return Ok(());
        };
        let m = self.metric_matrix()?;
        let n = *size;
        for i in 0..n {
            if m[i][i] != 0.0 {
                return Err(Error::NonMetricCost(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                if m[i][j] < 0.0 {
                    return Err(Error::NonMetricCost(format!("negative entry ({i},{j})")));
                }
                if (m[i][j] - m[j][i]).abs() > 1e-12 {
                    return Err(Error::NonMetricCost(format!("asymmetry at ({i},{j})")));
                }
                if i != j && m[i][j] == 0.0 {
                    return Err(Error::NonMetricCost(format!(
                        "zero distance between distinct states {i},{j}"
                    )));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if m[i][j] > m[i][k] + m[k][j] + 1e-12 {
                        return Err(Error::NonMetricCost(format!(
                            "triangle violation on ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
