//! Data-parallel helpers with a sequential fallback.
//!
//! The engine's hot loops (task waves, partition encoding) go through
//! [`par_map`]. With the `parallel` feature enabled the work runs on rayon;
//! without it, or when [`ExecMode::Sequential`] is requested at runtime, the
//! exact same closures run on one thread. Outputs are collected in input
//! order either way, so results are identical across modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

impl ExecMode {
    pub fn from_flag(parallel: bool) -> ExecMode {
        if parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Maps `f` over `items`, in parallel when the mode and the `parallel`
/// feature allow it. Results keep input order.
pub fn par_map<T, U, F>(mode: ExecMode, items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode == ExecMode::Parallel {
            return items.into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    items.into_iter().map(f).collect()
}
