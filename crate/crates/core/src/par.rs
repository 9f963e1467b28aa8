//! Chunked data-parallel helpers.
//!
//! Work is always split into fixed-size chunks whose results come back in
//! chunk order, so a reduction over the returned vector is independent of
//! thread count and of whether rayon is compiled in.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Selects how chunked work is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing pool; identical to `Sequential` without the
    /// `parallel` feature.
    #[default]
    Parallel,
}

impl Execution {
    /// True when this mode will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over consecutive chunks of `items`. `f` receives the chunk
    /// index and the chunk; results are returned in chunk order.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk_size: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> R + Sync + Send,
    {
        let chunk_size = chunk_size.max(1);
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items
                .par_chunks(chunk_size)
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect();
        }
        items
            .chunks(chunk_size)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect()
    }

    /// Maps `f` over index ranges `[start, end)` covering `0..n` in chunks.
    pub fn map_ranges<R, F>(self, n: usize, chunk_size: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize, std::ops::Range<usize>) -> R + Sync + Send,
    {
        let chunk_size = chunk_size.max(1);
        let n_chunks = n.div_ceil(chunk_size);
        let range = |i: usize| i * chunk_size..((i + 1) * chunk_size).min(n);
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return (0..n_chunks)
                .into_par_iter()
                .map(|i| f(i, range(i)))
                .collect();
        }
        (0..n_chunks).map(|i| f(i, range(i))).collect()
    }

    /// Element-wise map preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }
}
