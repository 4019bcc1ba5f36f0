//! Seeded parameter initialization.
//!
//! All randomness in the crate comes from [`rng_from_seed`], a ChaCha8 stream
//! (`rand_chacha::ChaCha8Rng`) seeded through `SeedableRng::seed_from_u64`.
//! Identical seeds give identical streams on every platform.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    UniformFan,
    Zeros,
    Ones,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_fan" | "uniform-fan" | "glorot" => Ok(Self::UniformFan),
            "zeros" => Ok(Self::Zeros),
            "ones" => Ok(Self::Ones),
            other => Err(Error::Config(format!("unknown init scheme '{}'", other))),
        }
    }
}

/// Fan-in/fan-out: leading and trailing dimension; a vector counts its length for both.
fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [first, .., last] => (*first, *last),
    }
}

pub fn init_with(rng: &mut SeededRng, shape: &[usize], scheme: InitScheme) -> Tensor {
    match scheme {
        InitScheme::Zeros => Tensor::zeros(shape),
        InitScheme::Ones => Tensor::ones(shape),
        InitScheme::UniformFan => {
            let (fan_in, fan_out) = fans(shape);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::from_parts(shape.to_vec(), data)
        }
    }
}

pub fn seeded_init(shape: &[usize], seed: u64, scheme: InitScheme) -> Tensor {
    init_with(&mut rng_from_seed(seed), shape, scheme)
}
