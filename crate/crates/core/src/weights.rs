//! Observation weights and seed derivation.
//!
//! Bayesian-bootstrap weights are i.i.d. Exp(1); normalizing them gives a
//! uniform Dirichlet draw over the observed support. Bootstrap (RF) weights
//! are multinomial resample counts.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Bayesian bootstrap: θ_i ~ Exp(1).
    Exponential,
    /// Classical bootstrap: resample counts.
    Multinomial,
    /// All ones (plain CART).
    Unit,
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" | "bf" => Ok(WeightMode::Exponential),
            "multinomial" | "rf" => Ok(WeightMode::Multinomial),
            "unit" | "dt" => Ok(WeightMode::Unit),
            other => Err(Error::invalid(format!("unknown weight mode '{other}'"))),
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMode::Exponential => "exponential",
            WeightMode::Multinomial => "multinomial",
            WeightMode::Unit => "unit",
        })
    }
}

/// Nonnegative observation weights with positive total.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    theta: Vec<f64>,
    total: f64,
    /// Weights are resample counts; leaf floors count each copy.
    counts: bool,
}

impl WeightVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::invalid("weight vector is empty"));
        }
        if let Some(bad) = theta.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::invalid(format!("invalid weight {bad}")));
        }
        let total: f64 = theta.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroWeight);
        }
        Ok(WeightVector { theta, total, counts: false })
    }

    /// Resample counts. A row with count k stands for k copies when leaf
    /// sizes are checked.
    pub fn counts(theta: Vec<f64>) -> Result<Self> {
        let mut w = WeightVector::new(theta)?;
        if let Some(bad) = w.theta.iter().find(|t| t.fract() != 0.0 || **t > u32::MAX as f64) {
            return Err(Error::invalid(format!("count weight {bad} is not a whole number")));
        }
        w.counts = true;
        Ok(w)
    }

    pub fn unit(n: usize) -> Self {
        WeightVector {
            theta: vec![1.0; n],
            total: n as f64,
            counts: true,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn is_counts(&self) -> bool {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// |θ|
    pub fn total(&self) -> f64 {
        self.total
    }

    /// ω = θ / |θ|
    pub fn omega(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t / self.total).collect()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        WeightVector::new(self.theta.iter().map(|t| t * c).collect())
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th child task of a master seed. Pure function of its
/// arguments, so results do not depend on scheduling.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_mul(GOLDEN_GAMMA) ^ 0x5851_F42D_4C95_7F2D))
}

/// Seed of the `index`-th sub-model (branch, chunk) of a composite model.
/// Index 0 keeps the master seed, so a one-part composite reproduces the
/// plain forest exactly.
pub fn part_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_mul(GOLDEN_GAMMA)
}

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw on the open interval (0, 1).
pub(crate) fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Draws `n` weights with the given mode from `rng`.
pub fn draw_weights_with(n: usize, mode: WeightMode, rng: &mut impl RngCore) -> Result<WeightVector> {
    if n == 0 {
        return Err(Error::invalid("cannot draw weights for zero observations"));
    }
    match mode {
        WeightMode::Unit => Ok(WeightVector::unit(n)),
        WeightMode::Exponential => WeightVector::new((0..n).map(|_| -open_unit(rng).ln()).collect()),
        WeightMode::Multinomial => {
            let mut counts = vec![0.0; n];
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1.0;
            }
            WeightVector::counts(counts)
        }
    }
}

pub fn draw_weights(n: usize, mode: WeightMode, seed: u64) -> Result<WeightVector> {
    draw_weights_with(n, mode, &mut rng_from_seed(seed))
}
