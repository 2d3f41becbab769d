//! Deterministic data-parallel helpers.
//!
//! Work over an index range is cut into fixed-size chunks. Each chunk is
//! reduced sequentially and the per-chunk partials are combined in chunk
//! order, so results are bit-identical whether the `parallel` feature is on
//! or off and whatever the size of the thread pool.

use std::ops::Range;

/// Default chunk length for reductions over bins and sparse cells.
pub const CHUNK: usize = 512;

fn chunks(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

/// Map every chunk of `0..n` to a partial result, preserving chunk order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunks(n, chunk);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Chunked map-reduce with an ordered final combine.
pub fn reduce_chunks<T, F, C>(n: usize, chunk: usize, identity: T, f: F, combine: C) -> T
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
    C: Fn(T, T) -> T,
{
    map_chunks(n, chunk, f).into_iter().fold(identity, combine)
}

/// Map each index independently, preserving order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Element-wise in-place accumulation of equally sized buffers.
pub fn add_into(mut acc: Vec<f64>, other: Vec<f64>) -> Vec<f64> {
    if acc.is_empty() {
        return other;
    }
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
    acc
}

/// Configure the global pool. A no-op without the `parallel` feature.
pub fn set_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_ranges_cover_domain() {
        let r = chunks(1030, 512);
        assert_eq!(r, vec![0..512, 512..1024, 1024..1030]);
        assert!(chunks(0, 512).is_empty());
    }

    #[test]
    fn reduction_matches_fixed_order_sum() {
        let xs: Vec<f64> = (0..5000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let got = reduce_chunks(
            xs.len(),
            CHUNK,
            0.0,
            |r| xs[r].iter().sum::<f64>(),
            |a, b| a + b,
        );
        let mut expected = 0.0;
        for c in chunks(xs.len(), CHUNK) {
            expected += xs[c].iter().sum::<f64>();
        }
        assert_eq!(got.to_bits(), expected.to_bits());
    }
}
