use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Exploration noise added to the actor output after the warm-up phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum NoiseMode {
    /// `N(-omega, 1)` where `omega` is the current engaged ratio.
    #[default]
    Adaptive,
    Static {
        mean: f64,
        std: f64,
    },
}

impl NoiseMode {
    pub fn distribution(self, engaged_ratio: f64) -> Normal<f64> {
        let (mean, std) = match self {
            NoiseMode::Adaptive => (-engaged_ratio, 1.0),
            NoiseMode::Static { mean, std } => (mean, std),
        };
        Normal::new(mean, std).expect("noise std is validated on construction")
    }

    /// Unclipped noise vector.
    pub fn sample<R: Rng + ?Sized>(self, engaged_ratio: f64, len: usize, rng: &mut R) -> Vec<f64> {
        let d = self.distribution(engaged_ratio);
        (0..len).map(|_| d.sample(rng)).collect()
    }
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseMode::Adaptive => f.write_str("adaptive"),
            NoiseMode::Static { mean, std } => write!(f, "static:{mean}:{std}"),
        }
    }
}

impl FromStr for NoiseMode {
    type Err = Error;

    /// `adaptive` or `static:<mean>:<std>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "adaptive" {
            return Ok(NoiseMode::Adaptive);
        }
        let bad = || {
            Error::invalid(format!(
                "bad noise mode '{s}' (expected adaptive or static:MEAN:STD)"
            ))
        };
        let rest = s.strip_prefix("static:").ok_or_else(bad)?;
        let (mean, std) = rest.split_once(':').ok_or_else(bad)?;
        let mean: f64 = mean.parse().map_err(|_| bad())?;
        let std: f64 = std.parse().map_err(|_| bad())?;
        if !mean.is_finite() || !(std.is_finite() && std >= 0.0) {
            return Err(bad());
        }
        Ok(NoiseMode::Static { mean, std })
    }
}

fn clip_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Behaviour action for a training step, in `[-1, 1]`.
///
/// During the first `exploration_episodes` episodes (1-based `episode`)
/// every entry is `N(0, 1)`; afterwards the actor output is perturbed by
/// `mode`'s noise. Both are clipped.
pub fn explore_action<R: Rng + ?Sized>(
    episode: usize,
    exploration_episodes: usize,
    actor_output: impl FnOnce() -> Result<Vec<f64>>,
    len: usize,
    engaged_ratio: f64,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if episode <= exploration_episodes {
        let d = Normal::new(0.0, 1.0).expect("unit normal");
        return Ok((0..len).map(|_| clip_unit(d.sample(rng))).collect());
    }
    let base = actor_output()?;
    let noise = mode.sample(engaged_ratio, base.len(), rng);
    Ok(base
        .iter()
        .zip(noise)
        .map(|(a, n)| clip_unit(a + n))
        .collect())
}
