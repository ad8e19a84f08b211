//! Data-parallel map helpers.
//!
//! Every parallel section in the crate is an order-preserving indexed map
//! through [`map_indexed`]; reductions then run sequentially over the
//! collected vector. Results are therefore bit-identical whatever the worker
//! count, and identical between the rayon path and the sequential fallback.
//!
//! The `parallel` cargo feature selects the rayon implementation; without it
//! the crate is fully sequential. With the feature on, [`force_sequential`]
//! flips execution to the fallback at runtime, which is what the benchmark
//! suite uses to compare both paths in one binary.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQ: AtomicBool = AtomicBool::new(false);

/// Route all subsequent [`map_indexed`] calls through the sequential path.
pub fn force_sequential(on: bool) {
    FORCE_SEQ.store(on, Ordering::Relaxed);
}

/// True when the sequential path is in effect (feature off or forced).
pub fn is_sequential() -> bool {
    cfg!(not(feature = "parallel")) || FORCE_SEQ.load(Ordering::Relaxed)
}

/// Cap the worker count. Must run before the first parallel map; returns
/// false when the pool already exists and the cap could not apply. Results
/// never depend on the cap, only throughput does.
pub fn cap_workers(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        if n == 0 {
            return false;
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        true
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.1).sin() / (i as f64 + 1.0);
        let par: Vec<f64> = map_indexed(257, f);
        force_sequential(true);
        let seq: Vec<f64> = map_indexed(257, f);
        force_sequential(false);
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
