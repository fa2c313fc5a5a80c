//! Reproducible random streams.
//!
//! Every stream is ChaCha20 (the RFC 8439 block function, 20 rounds) keyed
//! with the little-endian bytes of the 64-bit seed in the first eight key
//! bytes and zeros elsewhere. Independent purposes use distinct ChaCha
//! stream ids, so the streams never overlap and adding a new consumer never
//! shifts an existing one. The block function is pure integer arithmetic,
//! which makes the raw `u64` sequence identical on every platform.
//!
//! Derived variates:
//! * uniform in (0, 1]: `((next_u64() >> 11) + 1) * 2^-53`
//! * standard normal: Box–Muller cosine branch on two uniforms, evaluated
//!   with `libm` so transcendental rounding does not depend on the host libc.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids. Fixed forever; append new ones at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    MixingMatrix = 1,
    TrainSamples = 2,
    TestSamples = 3,
    NetworkInit = 4,
    Minibatch = 5,
    TrainDropout = 6,
    McDropout = 7,
    Scratch = 8,
}

pub struct SxRng {
    inner: ChaCha20Rng,
}

impl SxRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        Self::with_stream_id(seed, stream as u64)
    }

    pub fn with_stream_id(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on (0, 1].
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + (hi - lo) * u
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    /// Uniform integer in `0..n` by rejection (no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher–Yates shuffle, back to front.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
