//! Trial-level parallelism.
//!
//! Trials are keyed by seed and results come back in seed order, so reports
//! are identical with or without the `parallel` feature and for any thread
//! count.

/// Runs `f` once per seed, in parallel when the `parallel` feature is on.
pub fn map_trials<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| f(s)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_trials_sequential(seeds, f)
    }
}

/// Always sequential; the baseline for benchmarks.
pub fn map_trials_sequential<T, F>(seeds: &[u64], f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    seeds.iter().map(|&s| f(s)).collect()
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Caps the global worker pool at `DPSK_THREADS` when that variable is set.
/// Returns the cap that was applied.
pub fn configure_threads_from_env() -> Option<usize> {
    let n = std::env::var("DPSK_THREADS").ok()?.trim().parse::<usize>().ok()?;
    if n == 0 {
        return None;
    }
    #[cfg(feature = "parallel")]
    {
        // a pool that is already built keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Some(n)
}
