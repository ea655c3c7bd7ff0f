//! Execution-mode dispatch. Data-parallel inner loops (k-point solves, x
//! quadrature panels, (h, eta, mu) probe grids) go through `map_range` so the
//! sequential fallback stays exercised and benchmarkable. Results are always
//! collected in index order, so output is independent of worker count.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for ExecMode {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        ExecMode::Parallel
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        ExecMode::Sequential
    }
}

/// Map `f` over `0..n`, in parallel when the mode and feature allow it.
pub fn map_range<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
    }
}

/// Configure the global rayon pool. A no-op without the `parallel` feature.
pub fn configure_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        if n > 0 {
            // Ignore the error from double initialization; tests may race.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_preserves_order() {
        let out = map_range(ExecMode::default(), 100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn sequential_matches_default_mode() {
        let seq = map_range(ExecMode::Sequential, 64, |i| (i as f64).sin());
        let def = map_range(ExecMode::default(), 64, |i| (i as f64).sin());
        assert_eq!(seq, def);
    }
}
