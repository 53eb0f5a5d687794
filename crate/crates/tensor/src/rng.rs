//! Seedable xorshift-family RNG.
//!
//! Everything random in the workspace (weight init, scene synthesis,
//! data shuffles, test inputs) draws from this generator so runs are
//! reproducible bit-for-bit across platforms.

/// SplitMix64 scramble; also used to derive stream seeds.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// xorshift64* generator.
#[derive(Debug, Clone)]
pub struct XorShiftRng {
    state: u64,
}

impl XorShiftRng {
    pub fn new(seed: u64) -> Self {
        // Scramble so adjacent seeds give unrelated streams; state must be nonzero.
        let mut state = splitmix64(seed);
        if state == 0 {
            state = 0x9e37_79b9_7f4a_7c15;
        }
        XorShiftRng { state }
    }

    /// Derives an independent child stream, e.g. one per epoch or per scene.
    pub fn derive(seed: u64, stream: u64) -> Self {
        XorShiftRng::new(splitmix64(seed) ^ splitmix64(stream.wrapping_mul(0xa076_1d64_78bd_642f)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift map of a 64-bit draw onto [0, n); bias is < 2^-64 per draw.
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Distinct indices in [0, n), in random order. `k` is clamped to `n`.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut all: Vec<usize> = (0..n).collect();
        // Partial Fisher-Yates: only the first k slots need settling.
        for i in 0..k {
            let j = i + self.below(n - i);
            all.swap(i, j);
        }
        all.truncate(k);
        all
    }
}
