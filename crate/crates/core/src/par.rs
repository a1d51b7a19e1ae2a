//! Execution-mode switch for the data-parallel loops.
//!
//! [`Execution::Parallel`] uses rayon when the crate is built with the
//! `parallel` feature and degrades to sequential iteration otherwise. Both
//! modes visit work in the same fixed chunks and combine partial results in
//! chunk order, so outputs are bit-identical regardless of mode or thread
//! count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per reduction chunk. Part of the numerical contract: changing it
/// changes floating-point summation order.
pub const REDUCTION_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Whether this mode actually runs on multiple threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Deterministic chunked reduction over `0..n`.
///
/// Each chunk of [`REDUCTION_CHUNK`] indices is folded sequentially starting
/// from `init()`, then chunk partials are combined left to right.
pub fn chunked_reduce<A, I, F, C>(exec: Execution, n: usize, init: I, fold: F, combine: C) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    C: Fn(A, A) -> A,
{
    let chunks = n.div_ceil(REDUCTION_CHUNK);
    let partials = map_indexed(exec, chunks, |c| {
        let mut acc = init();
        let end = ((c + 1) * REDUCTION_CHUNK).min(n);
        for i in c * REDUCTION_CHUNK..end {
            fold(&mut acc, i);
        }
        acc
    });
    partials.into_iter().fold(init(), combine)
}
