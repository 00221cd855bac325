//! Switchable data parallelism.
//!
//! Candidate evaluations are independent, so the engine maps over them
//! either sequentially or on the rayon pool. The choice is a runtime value
//! rather than a compile-time one so a single binary can compare both;
//! builds without the `parallel` feature compile the rayon arm out and
//! treat [`Parallelism::Rayon`] as sequential.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    #[default]
    Rayon,
}

/// Map `f` over `items`, preserving input order in the output.
///
/// `f` must be deterministic per item; with that contract the sequential
/// and rayon paths return identical vectors.
pub fn maybe_par_map<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        Parallelism::Sequential => items.iter().map(f).collect(),
        Parallelism::Rayon => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.iter().map(f).collect()
            }
        }
    }
}

/// Like [`maybe_par_map`] for fallible work: runs everything, then returns
/// the error of the lowest-indexed failure so both modes fail identically.
pub fn try_maybe_par_map<T, R, F>(
    items: &[T],
    mode: Parallelism,
    f: F,
) -> crate::Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> crate::Result<R> + Sync + Send,
{
    maybe_par_map(items, mode, f).into_iter().collect()
}
