//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, stream, step, index, lane)`: the
//! tuple is pushed through a chain of splitmix64 finalisers and the resulting
//! 64 bits are mapped to a uniform in `(0, 1)`. Normals use Box-Muller on two
//! lanes. No generator state is carried between draws, so results do not
//! depend on evaluation order or thread count.

use std::f64::consts::TAU;

/// Independent sub-streams, so that e.g. initial sampling and Brownian
/// increments never reuse a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Sample = 1,
    Brownian = 2,
    Init = 3,
    Shuffle = 4,
    Augment = 5,
    Dataset = 6,
    Snapshot = 7,
}

#[inline]
fn splitmix(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn to_open_unit(bits: u64) -> f64 {
    // 52 random bits, shifted by half a step so 0 and 1 are both excluded.
    ((bits >> 12) as f64 + 0.5) * (1.0 / 4_503_599_627_370_496.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A new stream whose seed is derived from this one and `salt`.
    pub fn derive(&self, salt: u64) -> Self {
        Self {
            seed: splitmix(splitmix(self.seed) ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03)),
        }
    }

    #[inline]
    fn prefix(&self, stream: Stream, step: u64, index: u64) -> u64 {
        let h = splitmix(self.seed);
        let h = splitmix(h ^ stream as u64);
        let h = splitmix(h ^ step);
        splitmix(h ^ index)
    }

    #[inline]
    pub fn bits(&self, stream: Stream, step: u64, index: u64, lane: u64) -> u64 {
        splitmix(self.prefix(stream, step, index) ^ lane)
    }

    #[inline]
    pub fn uniform(&self, stream: Stream, step: u64, index: u64, lane: u64) -> f64 {
        to_open_unit(self.bits(stream, step, index, lane))
    }

    /// Standard normal for `(step, index, axis)`; uses lanes `2 axis` and `2 axis + 1`.
    #[inline]
    pub fn normal(&self, stream: Stream, step: u64, index: u64, axis: u64) -> f64 {
        let p = self.prefix(stream, step, index);
        box_muller(
            to_open_unit(splitmix(p ^ (2 * axis))),
            to_open_unit(splitmix(p ^ (2 * axis + 1))),
        )
    }

    /// Three normals for axes 0..3 sharing one prefix computation.
    #[inline]
    pub fn normal3(&self, stream: Stream, step: u64, index: u64) -> [f64; 3] {
        let p = self.prefix(stream, step, index);
        let mut out = [0.0; 3];
        for (axis, o) in out.iter_mut().enumerate() {
            let a = axis as u64;
            *o = box_muller(
                to_open_unit(splitmix(p ^ (2 * a))),
                to_open_unit(splitmix(p ^ (2 * a + 1))),
            );
        }
        out
    }

    /// Sequential draws over the lanes of one `(stream, step, index)` key.
    pub fn cursor(&self, stream: Stream, step: u64, index: u64) -> RngCursor {
        RngCursor {
            prefix: self.prefix(stream, step, index),
            lane: 0,
        }
    }
}

#[inline]
fn box_muller(u1: f64, u2: f64) -> f64 {
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Walks the lanes of a single counter key. Still counter-based: the n-th
/// draw from a cursor is a pure function of the key and n.
#[derive(Debug, Clone)]
pub struct RngCursor {
    prefix: u64,
    lane: u64,
}

impl RngCursor {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let b = splitmix(self.prefix ^ self.lane);
        self.lane += 1;
        b
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        to_open_unit(self.next_u64())
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        box_muller(u1, u2)
    }

    /// Uniform integer in `lo..=hi`.
    #[inline]
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as f64;
        lo + ((self.uniform() * span).floor() as i64).min(hi - lo)
    }

    /// Uniform index in `0..n`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn coin(&mut self) -> bool {
        self.uniform() < 0.5
    }
}
