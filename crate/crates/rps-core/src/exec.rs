//! Ordered execution of independent per-path work.
//!
//! Path solves are embarrassingly parallel but every consumer of the
//! results (moment accumulation, CSV emission) must see them in ascending
//! path order to stay byte-deterministic across worker counts. The batch
//! map below computes a chunk in parallel (indexed collect preserves
//! order), then hands results to the visitor sequentially; with the
//! `parallel` feature disabled the same code degrades to a plain loop.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Default number of in-flight results per batch. Bounds peak memory while
/// leaving enough work per batch to keep a pool busy.
pub const DEFAULT_CHUNK: usize = 256;

/// Map `f` over ids `lo..hi`, delivering results to `visit` in ascending id
/// order regardless of scheduling. At most `chunk` results are alive at a
/// time.
pub fn map_ordered_chunked<T: Send>(
    lo: u64,
    hi: u64,
    chunk: usize,
    f: impl Fn(u64) -> T + Sync,
    mut visit: impl FnMut(u64, T),
) {
    assert!(chunk > 0, "chunk size must be positive");
    let mut start = lo;
    while start < hi {
        let end = hi.min(start + chunk as u64);
        let batch = map_batch(start, end, &f);
        for (offset, item) in batch.into_iter().enumerate() {
            visit(start + offset as u64, item);
        }
        start = end;
    }
}

#[cfg(feature = "parallel")]
fn map_batch<T: Send>(lo: u64, hi: u64, f: &(impl Fn(u64) -> T + Sync)) -> Vec<T> {
    (lo..hi).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_batch<T: Send>(lo: u64, hi: u64, f: &(impl Fn(u64) -> T + Sync)) -> Vec<T> {
    (lo..hi).map(f).collect()
}

/// Run `f` inside a dedicated pool of `workers` threads; `None` uses the
/// ambient pool. The sequential fallback ignores the worker count.
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        None => f(),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .expect("thread pool construction only fails on resource exhaustion")
            .install(f),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}
