//! Index-parallel maps with a sequential fallback.
//!
//! With the `rayon` feature the `parallel` flag selects between rayon and a
//! plain loop at run time; without the feature every map is sequential. Output
//! order always follows the index order, so results are identical either way.

/// Maps `f` over `0..n`.
pub fn map_range<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "rayon")]
    if parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Like [`map_range`] but hands every worker a scratch value built by `init`.
pub fn map_range_init<T, S, I, F>(n: usize, parallel: bool, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    #[cfg(feature = "rayon")]
    if parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map_init(&init, |s, i| f(s, i)).collect();
    }
    let _ = parallel;
    let mut scratch = init();
    (0..n).map(|i| f(&mut scratch, i)).collect()
}

/// Applies `f` to every element of `items` in place.
pub fn for_each_mut<T, F>(items: &mut [T], parallel: bool, f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "rayon")]
    if parallel {
        use rayon::prelude::*;
        items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
        return;
    }
    let _ = parallel;
    items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
}

/// True when rayon support is compiled in.
pub const fn rayon_enabled() -> bool {
    cfg!(feature = "rayon")
}
