//! Counter-based random streams.
//!
//! Every random draw in the crate is a pure function of `(seed, stream, counter)`.
//! The block function is Philox4x32-10 (Salmon et al., SC'11): the 64-bit seed
//! is the Philox key and the 128-bit Philox counter is `[counter_lo, counter_hi,
//! stream_lo, stream_hi]`. One block yields two `u64` values, low word first:
//! `x0 | x1 << 32`, then `x2 | x3 << 32`.
//!
//! Derived quantities use fixed conversions so traces are reproducible across
//! versions:
//!
//! * uniform `f64` in `[0, 1)`: `(u >> 11) * 2^-53`
//! * uniform index in `[0, n)`: `(u as u128 * n as u128) >> 64`
//! * standard normal: `rand_distr::StandardNormal` (ziggurat) driven by the stream
//!
//! Substreams are derived with [`RngStream::substream`], which hashes the parent
//! stream id with the child index through SplitMix64. Parallel consumers each take
//! their own substream, so results do not depend on scheduling.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-known stream ids. Keeping them in one place avoids accidental reuse.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SAMPLER: u64 = 2;
    pub const SURROGATE_NOISE: u64 = 3;
    pub const FLATNESS_T2PM: u64 = 4;
    pub const FLATNESS_T1PM: u64 = 5;
    pub const HUTCHINSON: u64 = 6;
    pub const SYNTH_DATA: u64 = 7;
    pub const SUBSET: u64 = 8;
    pub const CHECKS: u64 = 9;
}

/// A deterministic position in the `(seed, stream, counter)` space.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
    spare: Option<u64>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream {
            seed,
            stream,
            counter: 0,
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream, a pure function of `(seed, stream, index)`.
    pub fn substream(&self, index: u64) -> RngStream {
        let child = splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x6A09_E667_F3BC_C908)));
        RngStream::new(self.seed, child)
    }

    fn block(&self, counter: u64) -> [u32; 4] {
        philox4x32_10(
            [
                counter as u32,
                (counter >> 32) as u32,
                self.stream as u32,
                (self.stream >> 32) as u32,
            ],
            [self.seed as u32, (self.seed >> 32) as u32],
        )
    }

    pub fn next_word(&mut self) -> u64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let b = self.block(self.counter);
        self.counter = self.counter.wrapping_add(1);
        self.spare = Some(b[2] as u64 | (b[3] as u64) << 32);
        b[0] as u64 | (b[1] as u64) << 32
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `[0, n)` by multiply-shift.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.next_word() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    /// +1 or -1 with equal probability.
    pub fn rademacher(&mut self) -> f64 {
        if self.next_word() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher-Yates shuffle using [`RngStream::index`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    pub fn fill_normal(&mut self, out: &mut [f64], scale: f64) {
        for v in out.iter_mut() {
            *v = scale * self.normal();
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.next_word() as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let w = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&w[..chunk.len()]);
        }
    }
}
