//! Deterministic pseudo-random number generation.
//!
//! Everything in this crate that samples (trajectories, palettes, parameter
//! init, batch shuffles) draws from [`Rng`], a xoshiro256++ generator seeded
//! through splitmix64. The streams are bit-stable across platforms and
//! versions, which is what makes dataset generation and training runs
//! byte-reproducible. Sub-streams for independent units of work (one clip, one
//! probe fit) are derived with [`Rng::derive`] so that work can be scheduled
//! in any order, on any number of threads, without changing results.

/// splitmix64 step; used for seeding and for stateless hashing.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix an arbitrary list of integers into a single well-spread 64-bit seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut state = 0x243f_6a88_85a3_08d3; // pi digits, nothing up the sleeve
    let mut acc = 0u64;
    for &p in parts {
        state ^= p.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        acc ^= splitmix64(&mut state);
    }
    // One extra scramble so short part-lists still avalanche.
    acc ^ splitmix64(&mut state)
}

/// xoshiro256++ generator.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
    /// Construction seed, kept so [`Rng::derive`] is consumption-independent.
    seed0: u64,
    /// Cached second output of the Box–Muller transform.
    gauss_spare: Option<f64>,
}

impl Rng {
    /// Seed via splitmix64 (the reference seeding procedure).
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s, seed0: seed, gauss_spare: None }
    }

    /// Derive an independent child generator for a tagged unit of work.
    ///
    /// The child stream depends only on (construction seed, tag), not on how
    /// much the parent has been consumed, so derivation commutes with
    /// scheduling order.
    pub fn derive(&self, tag: u64) -> Rng {
        Rng::from_seed(mix_seed(&[self.seed0, tag]))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). `n` must be > 0.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift bounded sampling; bias is < 2^-64, irrelevant here,
        // and the method is branch-free and stream-stable.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box–Muller.
    pub fn gauss(&mut self) -> f64 {
        if let Some(z) = self.gauss_spare.take() {
            return z;
        }
        // u1 in (0,1] to keep ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        self.gauss_spare = Some(r * sin);
        r * cos
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Pick one element uniformly.
    pub fn choose<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = Rng::from_seed(7);
        let mut b = Rng::from_seed(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derive_is_schedule_independent() {
        let parent = Rng::from_seed(42);
        let mut consumed = parent.clone();
        for _ in 0..17 {
            consumed.next_u64();
        }
        // Deriving from a consumed parent gives the same child stream.
        assert_eq!(parent.derive(3).next_u64(), consumed.derive(3).next_u64());
        // Different tags give different streams.
        assert_ne!(parent.derive(3).next_u64(), parent.derive(4).next_u64());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = Rng::from_seed(1);
        for _ in 0..10_000 {
            let x = rng.uniform();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn gauss_moments_are_sane() {
        let mut rng = Rng::from_seed(9);
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.gauss();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn below_is_unbiased_enough() {
        let mut rng = Rng::from_seed(5);
        let mut counts = [0usize; 7];
        for _ in 0..70_000 {
            counts[rng.below(7)] += 1;
        }
        for &c in &counts {
            assert!((c as f64 - 10_000.0).abs() < 500.0, "counts {counts:?}");
        }
    }
}
