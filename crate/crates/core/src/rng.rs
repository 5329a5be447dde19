//! Deterministic pseudo-random source for instance generation and noise.
//!
//! Everything downstream (generated packages, noisy writers, bootstrap
//! resampling) must be bit-reproducible across runs and platforms, so we use
//! splitmix64, fully specified by its recurrence:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output = z ^ (z >> 31)
//! ```
//!
//! All arithmetic is wrapping 64-bit, so the stream is identical on every
//! platform. Unit-interval conversion uses the top 53 bits.

#[derive(Debug, Clone)]
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

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). The modulo bias is irrelevant at benchmark
    /// scales (n is always far below 2^32).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        self.next_u64() % n
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_u32(&mut self, lo: u32, hi: u32) -> u32 {
        assert!(lo <= hi);
        lo + self.below(u64::from(hi - lo) + 1) as u32
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Standard normal via Box-Muller. Used only by the noisy writer, which
    /// promises per-seed (not cross-platform) reproducibility.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1], keeps ln finite
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Derives an independent stream seed from a base seed and a salt, so that
/// per-instance and per-run substreams never overlap by construction.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    SplitMix64::new(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference outputs computed with an independent implementation of the
    // recurrence; the seed-1234567 values match the published test vector.
    #[test]
    fn matches_reference_vectors() {
        let cases: &[(u64, [u64; 4])] = &[
            (
                0,
                [
                    16294208416658607535,
                    7960286522194355700,
                    487617019471545679,
                    17909611376780542444,
                ],
            ),
            (
                1,
                [
                    10451216379200822465,
                    13757245211066428519,
                    17911839290282890590,
                    8196980753821780235,
                ],
            ),
            (
                1234567,
                [
                    6457827717110365317,
                    3203168211198807973,
                    9817491932198370423,
                    4593380528125082431,
                ],
            ),
            (
                0xDEAD_BEEF,
                [
                    5395234354446855067,
                    16021672434157553954,
                    153047824787635229,
                    8387618351419058064,
                ],
            ),
        ];
        for &(seed, expect) in cases {
            let mut rng = SplitMix64::new(seed);
            for (i, &e) in expect.iter().enumerate() {
                assert_eq!(rng.next_u64(), e, "seed {seed} output {i}");
            }
        }
    }

    #[test]
    fn unit_interval_conversion_is_frozen() {
        let mut rng = SplitMix64::new(42);
        let expect = [
            0.7415648787718233,
            0.1599103928769201,
            0.27860113025513866,
            0.34419071652363753,
        ];
        for (i, &e) in expect.iter().enumerate() {
            assert_eq!(rng.next_f64(), e, "seed 42 f64 output {i}");
        }
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..10_000 {
            let x = rng.uniform(0.25, 0.75);
            assert!((0.25..0.75).contains(&x));
            let n = rng.range_u32(2, 5);
            assert!((2..=5).contains(&n));
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut rng = SplitMix64::new(99);
        let n = 20_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.07, "var {var}");
    }

    #[test]
    fn mixed_seeds_differ_by_salt() {
        let a = mix_seed(12345, 0);
        let b = mix_seed(12345, 1);
        assert_ne!(a, b);
        assert_eq!(a, mix_seed(12345, 0));
    }
}
