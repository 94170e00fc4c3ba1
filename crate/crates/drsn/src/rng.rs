//! Deterministic pseudo-random numbers.
//!
//! Every random choice in the crate (weight init, dataset synthesis, epoch
//! shuffling, augmentation) flows from a single `u64` seed through
//! [`SplitMix64`]. The generator is fully specified here so that runs are
//! reproducible across machines and across independent implementations:
//! state advances by the golden-gamma constant `0x9E3779B97F4A7C15` and the
//! output is the standard splitmix64 finalizer (Steele, Lea & Flood).

/// splitmix64 generator; one `u64` of state, period 2^64.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        // Modulo bias is < n / 2^64, irrelevant for the small ranges used here.
        self.next_u64() % n
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo + 1) as u64) as i64
    }

    /// Bernoulli draw with probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle, one draw per position from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Expands one run seed into independent per-consumer seeds (canonical
/// splitmix usage): consumer `k` receives the `k+1`-th output of a stream
/// seeded with `seed`. Consumer 0 is weight init, consumer 1 the training
/// loop.
pub fn derive_seed(seed: u64, consumer: u64) -> u64 {
    let mut rng = SplitMix64::new(seed);
    let mut out = rng.next_u64();
    for _ in 0..consumer {
        out = rng.next_u64();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sequence() {
        // Published splitmix64 test vectors for seed 0, plus a second seed
        // evaluated once against an independent implementation and frozen.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);

        let mut rng = SplitMix64::new(1234567);
        assert_eq!(rng.next_u64(), 0x599ed017fb08fc85);
        assert_eq!(rng.next_u64(), 0x2c73f08458540fa5);
        assert_eq!(rng.next_u64(), 0x883ebce5a3f27c77);
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut rng = SplitMix64::new(9);
        for _ in 0..10_000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn int_in_covers_range_inclusive() {
        let mut rng = SplitMix64::new(3);
        let mut seen = [false; 11];
        for _ in 0..1000 {
            let v = rng.int_in(-5, 5);
            assert!((-5..=5).contains(&v));
            seen[(v + 5) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = SplitMix64::new(7);
        let mut v: Vec<u32> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }
}
