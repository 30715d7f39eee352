//! Data-parallel helpers with a sequential fallback.
//!
//! Samples are independent (generation, per-sample gradients, evaluation),
//! so the hot loops map over slices. With the `parallel` feature (default)
//! the map runs on rayon; without it, or with [`ExecMode::Sequential`], it
//! runs in order on the calling thread. Results are always collected in
//! input order, so numeric output is identical in both modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for a per-sample map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Use rayon when the `parallel` feature is enabled, otherwise sequential.
    #[default]
    Parallel,
    /// Always run on the calling thread.
    Sequential,
}

/// Map `f` over `items` with the item index, collecting results in order.
pub fn map_indexed<T, U, F>(mode: ExecMode, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        #[cfg(not(feature = "parallel"))]
        ExecMode::Parallel => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        ExecMode::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

/// Fallible variant of [`map_indexed`]; the first error wins.
pub fn try_map_indexed<T, U, F>(mode: ExecMode, items: &[T], f: F) -> crate::Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> crate::Result<U> + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => items
            .par_iter()
            .enumerate()
            .map(|(i, t)| f(i, t))
            .collect(),
        #[cfg(not(feature = "parallel"))]
        ExecMode::Parallel => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        ExecMode::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

/// Map over a range of indices, collecting results in order.
pub fn map_range<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
        #[cfg(not(feature = "parallel"))]
        ExecMode::Parallel => (0..n).map(f).collect(),
        ExecMode::Sequential => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let items: Vec<u64> = (0..100).collect();
        let par = map_indexed(ExecMode::Parallel, &items, |i, x| x * 3 + i as u64);
        let seq = map_indexed(ExecMode::Sequential, &items, |i, x| x * 3 + i as u64);
        assert_eq!(par, seq);
    }

    #[test]
    fn try_map_propagates_error() {
        let items = [1u32, 2, 3];
        let r = try_map_indexed(ExecMode::Parallel, &items, |_, &x| {
            if x == 2 {
                Err(crate::Error::Input("boom".into()))
            } else {
                Ok(x)
            }
        });
        assert!(r.is_err());
    }
}
