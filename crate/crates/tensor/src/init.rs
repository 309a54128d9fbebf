use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::tensor::Tensor;

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Initializer {
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
    /// Gaussian with mean 0 and the given standard deviation.
    Normal { std: f64 },
    Zeros,
    Ones,
}

impl Initializer {
    /// The `Normal(0, 0.05)` scheme.
    pub const NORMAL_005: Initializer = Initializer::Normal { std: 0.05 };

    /// Deterministic in `(self, seed, shape)`.
    pub fn init(&self, shape: &[usize], seed: u64) -> Tensor {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = match *self {
            Initializer::Zeros => vec![0.0; n],
            Initializer::Ones => vec![1.0; n],
            Initializer::XavierUniform => {
                let (fan_in, fan_out) = fans(shape);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Initializer::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| rng.sample(dist)).collect()
            }
        };
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }
}

fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [a, b] => (*a, *b),
        [a, rest @ ..] => (*a, rest.iter().product()),
    }
}

/// Mixes a base seed with a name so every named tensor gets its own stream.
/// FNV-1a keeps the mapping stable across platforms and toolchains.
pub fn derive_seed(base: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in base.to_le_bytes().iter().chain(name.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
