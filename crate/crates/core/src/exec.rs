//! Execution helpers for the data-parallel inner loops.
//!
//! Grid runs, bootstrap replicates, and Monte-Carlo batches all map an index
//! range through a pure function. With the `parallel` feature (default) the
//! map runs on rayon; without it the sequential fallback is used. Results are
//! collected in index order either way, so outputs are identical across
//! feature flags and thread counts.

/// Map `f` over `0..n`, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, in parallel when the `parallel` feature is enabled.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Always-sequential variant; the fallback path, also used by the benchmarks
/// to compare against [`map_indexed`].
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Bound the global rayon pool to `jobs` threads. No-op without the
/// `parallel` feature, or if a pool was already installed.
pub fn set_jobs(jobs: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let sq = |i: usize| i * i;
        assert_eq!(map_indexed(100, sq), map_indexed_seq(100, sq));
    }
}
