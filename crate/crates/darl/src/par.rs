//! Data-parallel map helpers with a sequential fallback.
//!
//! All parallelism in this crate funnels through these functions. They map
//! over an indexed collection and return results in input order, so callers
//! that reduce the output left-to-right get bit-identical floats no matter
//! how many threads ran the map (or whether the `parallel` feature is on at
//! all). Work items must not share mutable state; anything random takes a
//! pre-split child generator.

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
