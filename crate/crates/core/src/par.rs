//! Batch evaluation over independent work items.
//!
//! Results are always collected in index order, so the output of a batch is
//! identical whichever mode ran it. Without the `parallel` feature
//! [`ExecMode::Parallel`] degrades to the sequential loop.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// True when this mode will actually fan out over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// `(0..len).map(f).collect()`, fanned out when `mode` allows it.
pub fn map_indexed<T, F>(mode: ExecMode, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..len).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; reports the lowest-index error.
pub fn try_map_indexed<T, E, F>(mode: ExecMode, len: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Send + Sync,
{
    map_indexed(mode, len, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f32).sqrt().sin();
        let seq = map_indexed(ExecMode::Sequential, 1000, f);
        let par = map_indexed(ExecMode::Parallel, 1000, f);
        assert_eq!(seq, par);
    }

    #[test]
    fn first_error_wins() {
        let r: Result<Vec<usize>, usize> = try_map_indexed(ExecMode::Parallel, 50, |i| {
            if i % 7 == 3 {
                Err(i)
            } else {
                Ok(i)
            }
        });
        assert_eq!(r, Err(3));
    }
}
