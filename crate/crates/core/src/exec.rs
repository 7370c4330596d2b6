//! Execution helpers: data-parallel maps with a sequential fallback.
//!
//! With the `parallel` feature (default) the maps run on the global
//! rayon pool unless sequential execution is forced at runtime; without
//! the feature the crate contains no rayon dependency at all. Reductions
//! of floating-point results are always performed sequentially over the
//! collected vector so reports are byte-identical run to run.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the crate into sequential execution at runtime (used by the
/// benchmark suite and by `DMS_THREADS=1`).
pub fn set_force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn force_sequential() -> bool {
    FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    // nesting guard: maps issued from inside a rayon worker run
    // sequentially, so outer data-parallel loops keep the pool to
    // themselves instead of flooding it with micro-tasks
    if force_sequential() || rayon::current_thread_index().is_some() {
        items.iter().map(f).collect()
    } else {
        items.par_iter().with_min_len(4).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Parallel map over an index range, collected in index order.
pub fn map_range<U, F>(len: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    let idx: Vec<usize> = (0..len).collect();
    map_collect(&idx, |&i| f(i))
}

/// Sequential fold of a parallel map: deterministic summation order.
pub fn map_sum<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    map_collect(items, f).into_iter().sum()
}

/// Maximum of a mapped slice, NaN-poisoning (NaN wins so it is visible).
pub fn map_max<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    map_collect(items, f)
        .into_iter()
        .fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { b } else { a.max(b) })
}
