//! Self-contained seeded RNG (xoshiro256++ seeded through SplitMix64).
//!
//! Search results and environment snapshots must be bit-reproducible from
//! their seeds across builds, so the generator is owned by this crate
//! instead of depending on an external crate whose stream may change
//! between versions.

/// Deterministic pseudo-random generator with independent named streams.
#[derive(Debug, Clone)]
pub struct Rng {
    state: [u64; 4],
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    /// Generator for `stream` derived from `seed`. Distinct streams from the
    /// same seed are statistically independent.
    pub fn seeded(seed: u64, stream: u64) -> Self {
        let mut sm = seed ^ stream.wrapping_mul(GOLDEN).rotate_left(17);
        let mut state = [0u64; 4];
        for s in &mut state {
            *s = splitmix64(&mut sm);
        }
        // xoshiro must not start from the all-zero state
        if state == [0, 0, 0, 0] {
            state[0] = GOLDEN;
        }
        Rng { state }
    }

    pub fn new(seed: u64) -> Self {
        Self::seeded(seed, 0)
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, unbiased. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Standard normal draw via Box-Muller. Consumes exactly two raw values.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        mean + std * r * (core::f64::consts::TAU * u2).cos()
    }

    /// Uniformly random `k`-subset of `{1, …, n}`, sorted ascending
    /// (Floyd's algorithm; consumes exactly `k` index draws).
    pub fn combination(&mut self, k: usize, n: usize) -> Vec<u32> {
        assert!(k <= n, "subset larger than ground set");
        let mut chosen: Vec<u32> = Vec::with_capacity(k);
        for j in (n - k + 1)..=n {
            let t = self.index(j) as u32 + 1;
            if chosen.contains(&t) {
                chosen.push(j as u32);
            } else {
                chosen.push(t);
            }
        }
        chosen.sort_unstable();
        chosen
    }
}
