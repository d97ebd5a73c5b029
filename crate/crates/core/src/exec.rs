//! Kernel execution strategy: rayon data parallelism with a sequential fallback.
//!
//! Every kernel splits its output into disjoint slices (one per `(tb, c)`
//! plane, channel, or chunk) and computes each slice independently, so the
//! parallel and sequential paths produce bitwise-identical results. Reductions
//! that would reorder floating-point sums (weight gradients, batch statistics)
//! are computed as ordered per-slice partials and folded sequentially.
//!
//! Without the `parallel` feature, `Exec::Parallel` silently degrades to the
//! sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which execution path a kernel takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Run `f(slice_index, slice)` over consecutive chunks of `out`.
///
/// `chunk` must divide `out.len()`.
pub fn for_each_chunk<T, F>(exec: Exec, out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    debug_assert_eq!(out.len() % chunk.max(1), 0);
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, s)| f(i, s));
        }
        _ => {
            for (i, s) in out.chunks_mut(chunk).enumerate() {
                f(i, s);
            }
        }
    }
}

/// Map every index in `0..n` to a value, preserving order.
///
/// Used for reductions: partials are produced in parallel but combined by the
/// caller in index order so the result does not depend on thread count.
pub fn map_indexed<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_dispatch_covers_all_slices() {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let mut out = vec![0usize; 12];
            for_each_chunk(exec, &mut out, 3, |i, s| {
                for v in s.iter_mut() {
                    *v = i + 1;
                }
            });
            assert_eq!(out, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4]);
        }
    }

    #[test]
    fn map_indexed_preserves_order() {
        for exec in [Exec::Sequential, Exec::Parallel] {
            let v = map_indexed(exec, 5, |i| i * i);
            assert_eq!(v, vec![0, 1, 4, 9, 16]);
        }
    }
}
