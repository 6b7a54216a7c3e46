//! Fan-out for independent work items (grid cells, seeds, sequences).
//!
//! Work items carry their own seeded RNG streams and results come back in
//! input order, so the parallel and sequential paths produce identical
//! output. Without the `parallel` feature everything runs sequentially and
//! `jobs` is ignored.

/// `jobs = 1` runs inline; `jobs = 0` uses the default thread pool;
/// any other value builds a pool of that size.
#[cfg(feature = "parallel")]
pub fn fan_out<T, U, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Send + Sync,
{
    use rayon::prelude::*;
    match jobs {
        1 => items.into_iter().map(f).collect(),
        0 => items.into_par_iter().map(f).collect(),
        n => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.into_par_iter().map(f).collect()),
            Err(_) => items.into_iter().map(f).collect(),
        },
    }
}

#[cfg(not(feature = "parallel"))]
pub fn fan_out<T, U, F>(items: Vec<T>, _jobs: usize, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
