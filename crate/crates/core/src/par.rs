//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into the same fixed-size chunks and reduced in chunk
//! order, so results are bit-identical whether or not the `parallel` feature
//! is enabled and regardless of the thread count.

use serde::{Deserialize, Serialize};

/// Number of samples handled by one unit of work.
pub const CHUNK: usize = 16;

/// How per-sample batch work is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is compiled in, otherwise
    /// behaves exactly like `Sequential`.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Map every item to an output, preserving order.
pub fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Fold fixed chunks of `0..n` independently, returning one accumulator per
/// chunk in chunk order. The caller reduces them sequentially.
pub fn fold_chunks<A, I, F>(exec: Execution, n: usize, init: I, f: F) -> Vec<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let run = |c: usize| {
        let mut acc = init();
        let end = ((c + 1) * CHUNK).min(n);
        for i in c * CHUNK..end {
            f(&mut acc, i);
        }
        acc
    };
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..chunks).into_par_iter().map(run).collect();
    }
    let _ = exec;
    (0..chunks).map(run).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_fold_is_execution_independent() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 1e3).collect();
        let sum = |exec| {
            fold_chunks(exec, xs.len(), || 0.0f64, |a, i| *a += xs[i])
                .into_iter()
                .fold(0.0, |a, b| a + b)
        };
        assert_eq!(
            sum(Execution::Sequential).to_bits(),
            sum(Execution::Parallel).to_bits()
        );
    }

    #[test]
    fn map_preserves_order() {
        let v: Vec<usize> = (0..100).collect();
        let out = map(Execution::Parallel, &v, |i, x| i * 1000 + x);
        assert!(out.iter().enumerate().all(|(i, &o)| o == i * 1001));
    }
}
