//! Counter-based random streams.
//!
//! Every consumer of randomness owns a [`Stream`] keyed by
//! `(seed, replica, purpose)`. A stream is a pure function of its key and an
//! incrementing counter (splitmix64 finalizer), so replaying a seed
//! reproduces every draw bit-for-bit regardless of thread scheduling, and
//! parallel replicas never share state.

use statrs::distribution::{ContinuousCDF, Normal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer: a bijective avalanche mix on 64 bits.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a sequence of words into a stream key.
fn derive_key(words: &[u64]) -> u64 {
    let mut k: u64 = 0x853C_49E6_748F_EA9B;
    for &w in words {
        k = mix(k.wrapping_add(GOLDEN) ^ mix(w.wrapping_add(GOLDEN)));
    }
    k
}

/// What a stream is consumed for. Distinct purposes get independent streams
/// even at the same (seed, replica).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Simulation,
    Certification,
    Corrector,
    Variance,
    Moment,
    Audit,
    Probe,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Simulation => 1,
            Purpose::Certification => 2,
            Purpose::Corrector => 3,
            Purpose::Variance => 4,
            Purpose::Moment => 5,
            Purpose::Audit => 6,
            Purpose::Probe => 7,
        }
    }
}

/// A counter-based random stream.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    /// Stream for a given (seed, purpose, replica) triple.
    pub fn new(seed: u64, purpose: Purpose, replica: u64) -> Self {
        Stream {
            key: derive_key(&[seed, purpose.tag(), replica]),
            counter: 0,
        }
    }

    /// Derive a sub-stream; used when one replica needs several independent
    /// streams (e.g. coupled chains share one, inner estimators another).
    pub fn substream(&self, tag: u64) -> Stream {
        Stream {
            key: derive_key(&[self.key, tag]),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in the open interval (0, 1); never returns 0 or 1, so it
    /// is safe to feed through an inverse CDF.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via inverse CDF; consumes exactly one draw.
    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        let u = self.next_open01();
        std_normal().inverse_cdf(u)
    }

    /// Index in 0..weights.len() with the given probabilities
    /// (weights must sum to 1); consumes exactly one draw.
    #[inline]
    pub fn next_index(&mut self, weights: &[f64]) -> usize {
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    }
}

fn std_normal() -> &'static Normal {
    use std::sync::OnceLock;
    static STD: OnceLock<Normal> = OnceLock::new();
    STD.get_or_init(|| Normal::new(0.0, 1.0).expect("unit normal"))
}

/// Standard normal CDF, used by oracle computations in checks and tests.
pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
