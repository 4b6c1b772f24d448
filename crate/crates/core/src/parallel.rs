//! Process-wide cap on internal parallelism.
//!
//! Zero (the default) keeps every computation on the calling thread. Parallel
//! sections only split work whose pieces are independent, so results are
//! bit-identical for every thread count.

use std::sync::{Arc, RwLock};

use rayon::ThreadPool;

static POOL: RwLock<Option<Arc<ThreadPool>>> = RwLock::new(None);

/// Sets the number of worker threads; `0` means sequential.
pub fn set_threads(threads: usize) {
    let pool = if threads == 0 {
        None
    } else {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok().map(Arc::new)
    };
    *POOL.write().expect("thread pool lock poisoned") = pool;
}

pub fn threads() -> usize {
    POOL.read()
        .expect("thread pool lock poisoned")
        .as_ref()
        .map_or(0, |p| p.current_num_threads())
}

/// Reads `COFACT_THREADS` and applies it; unset or unparsable means sequential.
pub fn init_from_env() {
    let threads = std::env::var("COFACT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    set_threads(threads);
}

pub(crate) fn pool() -> Option<Arc<ThreadPool>> {
    POOL.read().expect("thread pool lock poisoned").clone()
}
