//! Parallel trial executor.

use rayon::prelude::*;
use steinbn::risk::TrialExecutor;

/// Runs Monte Carlo blocks on the current rayon pool. Block results are
/// collected in index order, so reports match [`steinbn::risk::Sequential`]
/// bit for bit.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl TrialExecutor for Rayon {
    fn map_blocks<T, F>(&self, n_blocks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n_blocks).into_par_iter().map(f).collect()
    }
}

/// Runs `f` on a pool with `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}
