//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha20 generator seeded with
//! `ChaCha20Rng::seed_from_u64(root_seed)` and switched to a numbered stream
//! with `set_stream`. Stream ids are built by [`stream_id`], so a task's draws
//! depend only on `(root_seed, task index, attempt)` and never on scheduling.
//!
//! Normal variates use generator version 1: two 53-bit uniforms
//! `u = (x >> 11) * 2^-53` from consecutive `next_u64` calls, with `u1`
//! mapped to `1 - u1`, then the Box-Muller pair
//! `sqrt(-2 ln u1) * (cos 2πu2, sin 2πu2)`, consumed cosine first.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const NORMAL_GENERATOR_VERSION: u32 = 1;

/// Stream domains used by this crate.
pub mod domain {
    pub const WORD_EFFECTS: u16 = 1;
    pub const MODEL_EFFECTS: u16 = 2;
    pub const CELLS: u16 = 3;
    pub const MISSING: u16 = 4;
    pub const FINGERPRINT_SHARED: u16 = 5;
    pub const FINGERPRINT_SELF: u16 = 6;
    pub const FINGERPRINT_NOISE: u16 = 7;
    pub const BATTERY_NORM: u16 = 8;
    pub const BATTERY_DETERMINISTIC: u16 = 9;
    pub const BATTERY_HUMAN: u16 = 10;
    pub const NULL_SIMULATION: u16 = 16;
    pub const FOLDS: u16 = 32;
    pub const SEED_DERIVATION: u16 = 64;
}

/// Stream id for `(index, attempt)`. `domain` separates unrelated uses of
/// the same root seed (data generation vs. bootstrap, for example).
pub fn stream_id(domain: u16, index: u32, attempt: u16) -> u64 {
    ((domain as u64) << 48) | ((attempt as u64) << 32) | index as u64
}

pub fn stream(root_seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(root_seed);
    rng.set_stream(stream);
    rng
}

/// Child seed for `(purpose, index)`, so separate analyses driven by one
/// root seed do not share streams.
pub fn derive_seed(root_seed: u64, purpose: u16, index: u32) -> u64 {
    stream(root_seed, stream_id(domain::SEED_DERIVATION, index, purpose)).next_u64()
}

/// Standard normal sampler over any `RngCore`.
#[derive(Debug)]
pub struct Normals<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> Normals<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Draw from N(0, variance). A zero variance yields exactly zero but
    /// still advances the stream.
    pub fn normal(&mut self, variance: f64) -> f64 {
        variance.sqrt() * self.standard()
    }

    /// Uniform index in `0..n` by rejection sampling.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.rng.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle driven by [`Normals::index`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn normals(root_seed: u64, stream_id: u64) -> Normals<ChaCha20Rng> {
    Normals::new(stream(root_seed, stream_id))
}
