//! Execution mode for the O(M²) pairwise sums.
//!
//! Both modes compute one partial result per particle row with a fixed inner
//! summation order and combine rows sequentially in row order, so the
//! parallel mode reproduces the deterministic mode bit for bit. The parallel
//! mode runs on the current rayon pool; the CLI sizes that pool from
//! `STEINFLOW_THREADS`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    #[default]
    Deterministic,
    Parallel,
}

impl ExecMode {
    pub(crate) fn map_rows<T, F>(self, rows: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            ExecMode::Deterministic => (0..rows).map(f).collect(),
            ExecMode::Parallel => (0..rows).into_par_iter().map(f).collect(),
        }
    }
}

/// Reads `STEINFLOW_THREADS` (a positive integer), if set.
pub fn thread_cap_from_env() -> Option<usize> {
    std::env::var("STEINFLOW_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}
