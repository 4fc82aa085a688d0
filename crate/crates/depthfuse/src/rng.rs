//! Portable deterministic PRNG for sparsity masks and synthetic scenes.
//!
//! Sparsity masks have to be reproducible across runs, platforms, and
//! reimplementations in other languages, so the generator is pinned to a
//! fixed, documented algorithm instead of a library default that may change:
//!
//! * state update: xorshift64* (Vigna 2016) — `s ^= s >> 12; s ^= s << 25;
//!   s ^= s >> 27; output = s * 0x2545F4914F6CDD1D`;
//! * seeding: one SplitMix64 step over the user seed, falling back to a
//!   fixed odd constant if the mix yields zero (xorshift state must be
//!   non-zero);
//! * uniform doubles: top 53 bits, `(x >> 11) * 2^-53`, in `[0, 1)`.

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let mixed = splitmix64(seed);
        Self {
            state: if mixed == 0 { 0x9E3779B97F4A7C15 } else { mixed },
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut s = self.state;
        s ^= s >> 12;
        s ^= s << 25;
        s ^= s >> 27;
        self.state = s;
        s.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in `0..n`. `n` must be non-zero. The modulo bias is
    /// irrelevant at raster scale and keeps the stream arithmetic trivial
    /// to restate in another language.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
