//! Self-contained deterministic PRNG: xoshiro256++ seeded through SplitMix64.
//!
//! The generator is pinned (algorithm, seeding, and float mapping) so that
//! every seed-fixed regression in this repository reproduces bit-identically
//! on any platform. Test vectors for both stages live in the unit tests
//! below and are restated in the README.

/// SplitMix64 step; used only to expand a 64-bit seed into generator state.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256++ generator.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    /// Seeds the four state words from a SplitMix64 stream over `seed`.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = (self.s[0].wrapping_add(self.s[3]))
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

    /// Uniform draw in [0, 1): top 53 bits of the next word.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Uses the modulo map; the bias is
    /// irrelevant at the n << 2^64 scales used here.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller. Consumes two words per draw and
    /// discards the paired variate, keeping the generator stateless beyond
    /// its four words.
    pub fn normal(&mut self) -> f64 {
        // (0, 1] so the log argument never hits zero
        let u1 = ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_scaled(&mut self, mean: f64, sigma: f64) -> f64 {
        mean + sigma * self.normal()
    }

    /// k distinct indices in [0, n), ascending. Partial Fisher-Yates over a
    /// scratch index table.
    pub fn distinct_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        let mut picked = idx[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen with an independent reference implementation; the first
    // SplitMix64 output for seed 0 also matches the widely published value.
    #[test]
    fn splitmix64_vectors() {
        let mut s = 0u64;
        let got: Vec<u64> = (0..5).map(|_| splitmix64(&mut s)).collect();
        assert_eq!(
            got,
            vec![
                0xE220A8397B1DCDAF,
                0x6E789E6AA1B965F4,
                0x06C45D188009454F,
                0xF88BB8A8724C81EC,
                0x1B39896A51A8749B,
            ]
        );
        let mut s = 42u64;
        assert_eq!(splitmix64(&mut s), 0xBDD732262FEB6E95);
        assert_eq!(splitmix64(&mut s), 0x28EFE333B266F103);
    }

    #[test]
    fn xoshiro_seeding_and_stream() {
        let g = Rng::new(1);
        assert_eq!(
            g.s,
            [
                0x910A2DEC89025CC1,
                0xBEEB8DA1658EEC67,
                0xF893A2EEFB32555E,
                0x71C18690EE42C90B,
            ]
        );
        let mut g = Rng::new(1);
        let got: Vec<u64> = (0..8).map(|_| g.next_u64()).collect();
        assert_eq!(
            got,
            vec![
                0xCFC5D07F6F03C29B,
                0xBF424132963FE08D,
                0x19A37D5757AAF520,
                0xBF08119F05CD56D6,
                0x2F47184B86186FA4,
                0x97299FCAE7202345,
                0xFCA3C79508F41507,
                0x85FEA5C90363F221,
            ]
        );
        let mut g = Rng::new(20240001);
        assert_eq!(g.next_u64(), 0x6BC3BA8FBD18A8ED);
        assert_eq!(g.next_u64(), 0x14A0631FD5BA5AC0);
    }

    #[test]
    fn uniform_mapping_is_pinned() {
        let mut g = Rng::new(1);
        assert_eq!(g.uniform(), 0.8116121588818848);
        assert_eq!(g.uniform(), 0.7471047161582187);
        assert_eq!(g.uniform(), 0.10015090353378375);
    }

    #[test]
    fn determinism_across_instances() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn normal_draws_are_finite_and_centered() {
        let mut g = Rng::new(3);
        let n = 4096;
        let mut sum = 0.0;
        for _ in 0..n {
            let v = g.normal();
            assert!(v.is_finite());
            sum += v;
        }
        assert!((sum / n as f64).abs() < 0.1);
    }

    #[test]
    fn distinct_indices_are_distinct_and_sorted() {
        let mut g = Rng::new(9);
        let picked = g.distinct_indices(64, 8);
        assert_eq!(picked.len(), 8);
        for w in picked.windows(2) {
            assert!(w[0] < w[1]);
        }
    }
}
