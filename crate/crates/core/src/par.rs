//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature and `jobs != 1` the items run on a rayon pool of
//! `jobs` threads (`0` means one per core). Otherwise they run in order on the
//! calling thread. Results always come back in input order, so callers that
//! derive per-item RNG streams from the item index get identical output either way.

pub fn map_indexed<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs != 1 && items.len() > 1 {
            return parallel(items, jobs, f);
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(feature = "parallel")]
fn parallel<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    let run = || items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    if jobs == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("could not build a {jobs}-thread pool ({e}); using the global pool");
            run()
        }
    }
}

/// Whether this build can actually run items concurrently.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
