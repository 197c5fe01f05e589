//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers fan work out over rayon's global
//! pool; without it (or after [`set_enabled`]`(false)`) they run the same
//! closures sequentially. Work is always split over *output* elements, each
//! of which is computed by exactly one closure invocation in a fixed order,
//! so results are bitwise identical in both modes.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Below this many output elements the sequential path is always taken.
pub const MIN_PARALLEL_LEN: usize = 1 << 14;

/// Runtime switch, mainly for benchmarks comparing both paths in one build.
pub fn set_enabled(on: bool) {
    ENABLED.store(on, Ordering::Relaxed);
}

pub fn is_enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

/// Calls `f(chunk_index, chunk)` for each `chunk_len`-sized chunk of `out`.
pub fn for_each_chunk<F>(out: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if is_enabled() && out.len() >= MIN_PARALLEL_LEN && out.len() > chunk_len {
        out.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    out.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Elementwise map into a fresh buffer.
pub fn map(input: &[f64], f: impl Fn(f64) -> f64 + Sync + Send) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    let chunk = 4096;
    for_each_chunk(&mut out, chunk, |ci, c| {
        let base = ci * chunk;
        for (k, o) in c.iter_mut().enumerate() {
            *o = f(input[base + k]);
        }
    });
    out
}

/// Elementwise zip-map of two equal-length slices.
pub fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    let mut out = vec![0.0; a.len()];
    let chunk = 4096;
    for_each_chunk(&mut out, chunk, |ci, c| {
        let base = ci * chunk;
        for (k, o) in c.iter_mut().enumerate() {
            *o = f(a[base + k], b[base + k]);
        }
    });
    out
}

/// Maps every item independently; output order matches input order.
pub fn map_items<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_enabled() && items.len() > 1 {
        return items.into_par_iter().map(f).collect();
    }
    items.into_iter().map(f).collect()
}

/// `f(i)` for `i in 0..n`, collected in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_enabled() && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_map_matches_sequential() {
        let input: Vec<f64> = (0..50_000).map(|i| i as f64 * 0.001).collect();
        let par = map(&input, f64::sin);
        set_enabled(false);
        let seq = map(&input, f64::sin);
        set_enabled(true);
        assert_eq!(par, seq);
    }

    #[test]
    fn map_range_keeps_order() {
        let v = map_range(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }
}
