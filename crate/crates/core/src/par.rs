//! Data-parallel inner loops with a sequential fallback.
//!
//! With the `parallel` feature (the default), [`map`] fans work out over the
//! rayon thread pool; without it, everything runs on the calling thread. Both
//! paths return results in input order, so callers see identical output
//! either way. [`map_sequential`] (and, with the feature, [`map_parallel`])
//! are always dispatched explicitly; the benches use them to compare the two.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, in parallel when the `parallel` feature is enabled.
/// Output order matches input order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

/// Sequential map with the same bounds as [`map`].
pub fn map_sequential<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Rayon-backed map. Only compiled with the `parallel` feature.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}
