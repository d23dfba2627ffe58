//! Seeded sampling with independent streams.
//!
//! Each run derives separate generators for data, rotation, initialization,
//! training noise and evaluation from one seed. Streams map onto the ChaCha
//! stream counter, so they never share state.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::Matrix;

/// Named stream ids used by the training pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Data,
    Rotation,
    Init,
    Noise,
    Eval,
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Data => 0,
            Stream::Rotation => 1,
            Stream::Init => 2,
            Stream::Noise => 3,
            Stream::Eval => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prng {
    rng: ChaCha8Rng,
    seed: u64,
    stream: u64,
    spare: Option<f64>,
}

impl Prng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            seed,
            stream,
            spare: None,
        }
    }

    pub fn for_stream(seed: u64, stream: Stream) -> Self {
        Self::new(seed, stream.id())
    }

    /// A fresh generator on the same seed but another stream.
    pub fn with_stream(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the half-open interval (0, 1]; never returns zero.
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + (hi - lo) * u
    }

    /// Standard normal variate via the Box–Muller transform. Variates are
    /// produced in pairs; the second is cached for the next call.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform_open0();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }
}

/// Matrix of i.i.d. standard normal entries, filled row-major.
pub fn gaussian_matrix(prng: &mut Prng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| prng.gaussian())
}
