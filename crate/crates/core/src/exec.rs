//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (the default) the ordered map helpers fan out
//! over rayon's global pool; without it they degrade to plain sequential
//! iteration. Results are always collected in input order and every item is
//! computed independently, so output bytes do not depend on thread count or
//! on whether the feature is enabled. The `*_seq` variants are always
//! compiled; benches use them to compare both modes in one binary.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Indexed variant of [`map_ordered`].
#[cfg(feature = "parallel")]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Indexed variant of [`map_ordered`].
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Sequential reference implementation of [`map_ordered`], always available.
pub fn map_ordered_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential reference implementation of [`map_indexed`], always available.
pub fn map_indexed_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Number of worker threads the parallel paths will use.
pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Bound the global worker pool. Call once, before any parallel work.
///
/// Returns `false` if the pool was already initialized (the bound then has
/// no effect). A no-op without the `parallel` feature.
pub fn set_num_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_matches_sequential() {
        let xs: Vec<i64> = (0..1000).collect();
        let par = map_ordered(&xs, |x| x * x - 7);
        let seq = map_ordered_seq(&xs, |x| x * x - 7);
        assert_eq!(par, seq);
    }

    #[test]
    fn indexed_preserves_positions() {
        let xs = vec![10u64, 20, 30];
        let out = map_indexed(&xs, |i, x| (i, *x));
        assert_eq!(out, vec![(0, 10), (1, 20), (2, 30)]);
    }
}
