//! Runs independent jobs, in parallel when the `parallel` feature is on.

/// Whether [`map`] runs jobs concurrently in this build.
pub const PARALLEL: bool = cfg!(feature = "parallel");

/// Applies `f` to every item, preserving order.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

/// Applies `f` to every item on the calling thread.
pub fn map_sequential<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn both_paths_agree_and_keep_order() {
        let xs: Vec<u64> = (0..100).collect();
        let sq = |x: &u64| x * x;
        assert_eq!(super::map(&xs, sq), super::map_sequential(&xs, sq));
        assert_eq!(super::map(&xs, sq)[7], 49);
    }
}
