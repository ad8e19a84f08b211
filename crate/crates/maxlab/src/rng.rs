//! Deterministic random streams.
//!
//! Every randomized routine in this crate draws from [`Stream`], a SplitMix64
//! generator (Steele, Lea, Flood 2014). The algorithm is pinned here so a port
//! in another language can reproduce sequences bit for bit:
//!
//! * state update: `s += 0x9E3779B97F4A7C15`
//! * output: `z = s; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;`
//!   `z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`
//! * `f64` in `[0,1)`: top 53 bits, `(next_u64() >> 11) as f64 * 2^-53`
//! * `below(n)`: rejection sampling, draw `x = next_u64()` until
//!   `x < u64::MAX - (u64::MAX % n)`, return `x % n` (unbiased)
//! * stream derivation: stream `i` of seed `s` starts from the state
//!   `mix(s ^ mix(i))` where `mix` is one SplitMix64 output step applied to
//!   the raw value. Distinct stream indices give independent sequences, so
//!   parallel workers can draw without sharing state.

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// SplitMix64 stream. `Clone` is cheap; cloning forks the exact state.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    /// Root stream for a seed.
    pub fn new(seed: u64) -> Self {
        Stream { state: mix(seed) }
    }

    /// Independent substream `index` of `seed`. Used to give each Monte Carlo
    /// sample, restart, or worker its own sequence: results are then invariant
    /// under the parallel schedule.
    pub fn substream(seed: u64, index: u64) -> Self {
        Stream {
            state: mix(seed ^ mix(index.wrapping_mul(GOLDEN).wrapping_add(1))),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let limit = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % n;
            }
        }
    }

    /// Uniform in `[lo, hi)` (integer endpoints allowed to be negative).
    pub fn below_i64(&mut self, lo: i64, hi: i64) -> i64 {
        assert!(lo < hi);
        lo + self.below((hi - lo) as u64) as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sequence() {
        // First outputs of SplitMix64 seeded with raw state 0 are fixed by the
        // algorithm; pin them so ports can check against the same numbers.
        let mut s = Stream { state: 0 };
        assert_eq!(s.next_u64(), 0xE220A8397B1DCDAF);
        assert_eq!(s.next_u64(), 0x6E789E6AA1B965F4);
        assert_eq!(s.next_u64(), 0x06C45D188009454F);
    }

    #[test]
    fn streams_differ_and_reproduce() {
        let mut a = Stream::substream(7, 0);
        let mut b = Stream::substream(7, 1);
        let mut a2 = Stream::substream(7, 0);
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let xs2: Vec<u64> = (0..4).map(|_| a2.next_u64()).collect();
        assert_eq!(xs, xs2);
        assert_ne!(xs, ys);
    }

    #[test]
    fn below_is_in_range() {
        let mut s = Stream::new(3);
        for _ in 0..1000 {
            assert!(s.below(7) < 7);
        }
    }

    #[test]
    fn f64_in_unit_interval() {
        let mut s = Stream::new(11);
        for _ in 0..1000 {
            let x = s.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
