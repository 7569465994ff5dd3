//! Random initial-state specifications and deterministic ensemble sampling.
//!
//! Draws come from `ChaCha8Rng` seeded with `seed_from_u64`, so a given
//! `(spec, M, seed)` triple yields the same ensemble on every platform.
//! Coordinates are drawn sample by sample, in declaration order.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleState;
use crate::error::{OcError, Result};

/// Marginal law of one coordinate, or of three coordinates jointly for the
/// spherical shell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    Dirac {
        value: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Normal {
        mean: f64,
        std_dev: f64,
    },
    /// Cartesian point `r (sinθ cosφ, sinθ sinφ, cosθ)` with `r ~ U(0, r_max)`,
    /// `θ ~ U(0, π)`, `φ ~ U(0, 2π)`. Occupies three coordinates.
    SphericalShell {
        r_max: f64,
    },
}

impl Distribution {
    /// Number of state coordinates this entry fills.
    pub fn width(&self) -> usize {
        match self {
            Distribution::SphericalShell { .. } => 3,
            _ => 1,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |msg: String| Err(OcError::Parameter(format!("initial[{index}]: {msg}")));
        match *self {
            Distribution::Dirac { value } if !value.is_finite() => {
                bad(format!("dirac value must be finite, got {value}"))
            }
            Distribution::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                bad(format!("uniform requires finite lo <= hi, got [{lo}, {hi}]"))
            }
            Distribution::Normal { mean, std_dev } if !(mean.is_finite() && std_dev.is_finite() && std_dev >= 0.0) => {
                bad(format!("normal requires std_dev >= 0, got {std_dev}"))
            }
            Distribution::SphericalShell { r_max } if !(r_max.is_finite() && r_max >= 0.0) => {
                bad(format!("spherical shell requires r_max >= 0, got {r_max}"))
            }
            _ => Ok(()),
        }
    }

    /// Expected value of each covered coordinate.
    fn nominal(&self, out: &mut Vec<f64>) {
        match *self {
            Distribution::Dirac { value } => out.push(value),
            Distribution::Uniform { lo, hi } => out.push(0.5 * (lo + hi)),
            Distribution::Normal { mean, .. } => out.push(mean),
            Distribution::SphericalShell { .. } => out.extend([0.0; 3]),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        match *self {
            Distribution::Dirac { value } => out.push(value),
            Distribution::Uniform { lo, hi } => out.push(lo + (hi - lo) * rng.random::<f64>()),
            Distribution::Normal { mean, std_dev } => {
                let normal = Normal::new(mean, std_dev).expect("validated");
                out.push(normal.sample(rng));
            }
            Distribution::SphericalShell { r_max } => {
                let r = r_max * rng.random::<f64>();
                let theta = PI * rng.random::<f64>();
                let phi = 2.0 * PI * rng.random::<f64>();
                out.push(r * theta.sin() * phi.cos());
                out.push(r * theta.sin() * phi.sin());
                out.push(r * theta.cos());
            }
        }
    }
}

/// Independent laws for every coordinate of the (augmented) initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Distribution>", into = "Vec<Distribution>")]
pub struct RandomInputSpec {
    entries: Vec<Distribution>,
}

impl RandomInputSpec {
    pub fn new(entries: Vec<Distribution>) -> Result<Self> {
        for (i, d) in entries.iter().enumerate() {
            d.validate(i)?;
        }
        Ok(Self { entries })
    }

    /// Deterministic spec placing all mass on `x`.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(x.iter().map(|&value| Distribution::Dirac { value }).collect())
    }

    pub fn entries(&self) -> &[Distribution] {
        &self.entries
    }

    /// Number of state coordinates produced per sample.
    pub fn dim(&self) -> usize {
        self.entries.iter().map(Distribution::width).sum()
    }

    /// Mean of every coordinate; used to build nominal (deterministic) variants.
    pub fn nominal(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for d in &self.entries {
            d.nominal(&mut out);
        }
        out
    }

    pub fn is_deterministic(&self) -> bool {
        self.entries.iter().all(|d| match *d {
            Distribution::Dirac { .. } => true,
            Distribution::Uniform { lo, hi } => lo == hi,
            Distribution::Normal { std_dev, .. } => std_dev == 0.0,
            Distribution::SphericalShell { r_max } => r_max == 0.0,
        })
    }
}

impl TryFrom<Vec<Distribution>> for RandomInputSpec {
    type Error = OcError;

    fn try_from(entries: Vec<Distribution>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<RandomInputSpec> for Vec<Distribution> {
    fn from(spec: RandomInputSpec) -> Self {
        spec.entries
    }
}

/// Draws `samples` i.i.d. initial states.
pub fn sample_initial_ensemble(spec: &RandomInputSpec, samples: usize, seed: u64) -> Result<EnsembleState> {
    if samples == 0 {
        return Err(OcError::Parameter("sample count M must be >= 1".into()));
    }
    for (i, d) in spec.entries.iter().enumerate() {
        d.validate(i)?;
    }
    let dim = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(samples * dim);
    for _ in 0..samples {
        for d in &spec.entries {
            d.draw(&mut rng, &mut data);
        }
    }
    EnsembleState::new(Array2::from_shape_vec((samples, dim), data).expect("sized above"))
}
