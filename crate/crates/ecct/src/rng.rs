//! Deterministic keyed random streams.
//!
//! Every stream is identified by a 64-bit seed plus a 4-word key
//! `(purpose, a, b, c)` — e.g. `(TRAIN, epoch, batch, sample)` — and draws
//! are a pure function of `(seed, key, counter)`. This makes parallel sample
//! generation order-independent and bit-exact reproducible: the same key
//! always yields the same values no matter which worker consumes it.
//!
//! Uniform doubles come from the top 53 bits of a counter-based splitmix64
//! mix; Gaussians from Box-Muller on consecutive uniform pairs.

/// Stream purposes; the first key word.
pub mod purpose {
    pub const TRAIN: u64 = 0x7452_4149;
    pub const EVAL: u64 = 0x4556_414c;
    pub const INIT: u64 = 0x494e_4954;
    pub const TEST: u64 = 0x5445_5354;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based random stream keyed by `(seed, [purpose, a, b, c])`.
#[derive(Debug, Clone)]
pub struct RngStream {
    base: u64,
    counter: u64,
    spare_gaussian: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, key: [u64; 4]) -> Self {
        let mut base = mix(seed ^ GOLDEN);
        for w in key {
            base = mix(base.wrapping_add(w).wrapping_add(GOLDEN));
        }
        RngStream { base, counter: 0, spare_gaussian: None }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)`, 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)` by rejection-free scaling.
    pub fn next_index(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        let v = ((self.next_u64() as u128 * bound as u128) >> 64) as usize;
        debug_assert!(v < bound);
        v
    }

    pub fn next_bit(&mut self) -> u8 {
        (self.next_u64() >> 63) as u8
    }

    /// Standard normal via Box-Muller; the second value of each pair is
    /// cached, so consecutive draws consume uniforms in pairs.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(g) = self.spare_gaussian.take() {
            return g;
        }
        // 1 - u maps [0,1) to (0,1], keeping ln finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_gaussian = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform in `(-a, a)`.
    pub fn next_uniform_sym(&mut self, a: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * a
    }
}
