//! Worker-thread control.
//!
//! Pixel loops partition work across the ambient rayon pool when the
//! `parallel` feature is on. [`with_threads`] runs a closure inside a local
//! pool of the requested size so callers (CLI `--threads`, determinism
//! tests, benchmarks) can pin the worker count. Without the feature the
//! closure simply runs on the calling thread.

/// Runs `f` with `n` worker threads available to data-parallel loops.
///
/// Results of the engine's operations are bit-identical for any `n`.
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    let n = n.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("failed to build worker pool");
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(n: usize, f: impl FnOnce() -> R + Send) -> R {
    let _ = n;
    f()
}

/// Number of threads the default pool would use.
#[cfg(feature = "parallel")]
pub fn default_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
pub fn default_threads() -> usize {
    1
}
