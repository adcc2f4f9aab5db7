//! Serial / data-parallel execution of independent work items.

use serde::{Deserialize, Serialize};

/// How batches of independent items (trials, dictionary chunks) are run.
///
/// `Parallel` uses the rayon pool when the `parallel` feature is enabled and
/// silently degrades to `Serial` otherwise. Results come back in index order
/// either way, so outputs do not depend on the choice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Serial => (0..n).map(f).collect(),
            Execution::Parallel => par_map(n, f),
        }
    }

    /// Whether this build can actually run in parallel.
    pub fn available() -> bool {
        cfg!(feature = "parallel")
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
