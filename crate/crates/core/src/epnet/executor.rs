//! Toy deterministic executor standing in for a sandboxed script engine.
//!
//! Each data object becomes a 44-byte output:
//!
//! ```text
//! b"EPO1" | SHA-256(input) | input length as u64 BE
//! ```
//!
//! preceded by a configurable stretch of busy-work.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const OUTPUT_TAG: &[u8; 4] = b"EPO1";
pub const OUTPUT_LEN: usize = 4 + 32 + 8;

pub fn transform(input: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(OUTPUT_LEN);
    out.extend_from_slice(OUTPUT_TAG);
    out.extend_from_slice(&Sha256::digest(input));
    out.extend_from_slice(&(input.len() as u64).to_be_bytes());
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutorConfig {
    /// Busy-work per data object.
    pub busy_per_object: Duration,
    /// Relative jitter on the busy-work, uniform in `[-jitter, +jitter]`.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            busy_per_object: Duration::ZERO,
            jitter: 0.0,
            seed: 0,
        }
    }
}

pub struct Executor {
    config: ExecutorConfig,
    rng: Mutex<ChaCha8Rng>,
}

impl Executor {
    pub fn new(config: ExecutorConfig) -> Self {
        let rng = Mutex::new(ChaCha8Rng::seed_from_u64(config.seed));
        Executor { config, rng }
    }

    pub fn tag(&self) -> String {
        format!("toy-sha256/{}us", self.config.busy_per_object.as_micros())
    }

    fn busy_duration(&self) -> Duration {
        let base = self.config.busy_per_object;
        if self.config.jitter <= 0.0 || base.is_zero() {
            return base;
        }
        let j = self.config.jitter.min(1.0);
        let f: f64 = self.rng.lock().unwrap().gen_range(-j..=j);
        base.mul_f64(1.0 + f)
    }

    /// Runs one object: spins for the configured busy-work, then transforms.
    pub fn run(&self, input: &[u8]) -> Vec<u8> {
        let until = Instant::now() + self.busy_duration();
        while Instant::now() < until {
            std::hint::spin_loop();
        }
        transform(input)
    }
}
