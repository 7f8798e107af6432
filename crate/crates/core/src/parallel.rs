//! Chain fan-out. Every chain owns its random stream (`RandomSource::for_chain`),
//! so results do not depend on the execution mode or the thread count.

use crate::error::{Error, Result};

/// How independent chains are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Plain loop on the calling thread.
    Sequential,
    /// Data-parallel over chains; `None` uses every available core.
    /// Falls back to [`ExecMode::Sequential`] without the `parallel` feature.
    #[default]
    Parallel,
    /// Data-parallel on a private pool of the given size.
    Threads(usize),
}

impl ExecMode {
    pub fn from_threads(threads: Option<usize>) -> Result<Self> {
        match threads {
            None => Ok(ExecMode::Parallel),
            Some(0) => Err(Error::InvalidConfig("threads must be at least 1".into())),
            Some(1) => Ok(ExecMode::Sequential),
            Some(n) => Ok(ExecMode::Threads(n)),
        }
    }
}

/// Evaluates `f(0..n)` and returns the results in index order. The first
/// error (by index) wins.
pub fn map_chains<T, F>(n: usize, mode: ExecMode, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => par::map(n, f),
        #[cfg(feature = "parallel")]
        ExecMode::Threads(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| par::map(n, f))
        }
        #[cfg(not(feature = "parallel"))]
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(feature = "parallel")]
mod par {
    use super::*;
    use rayon::prelude::*;

    pub(super) fn map<T, F>(n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let f = |i: usize| Ok(i * i);
        let a = map_chains(1000, ExecMode::Sequential, f).unwrap();
        let b = map_chains(1000, ExecMode::Parallel, f).unwrap();
        let c = map_chains(1000, ExecMode::Threads(3), f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a[31], 961);
    }

    #[test]
    fn error_propagates() {
        let r = map_chains(10, ExecMode::Parallel, |i| {
            if i == 7 {
                Err(Error::DegenerateSamples("boom".into()))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
    }

    #[test]
    fn thread_flag() {
        assert!(ExecMode::from_threads(Some(0)).is_err());
        assert_eq!(ExecMode::from_threads(Some(1)).unwrap(), ExecMode::Sequential);
        assert_eq!(ExecMode::from_threads(None).unwrap(), ExecMode::Parallel);
    }
}
