//! Deterministic parallel replicate farms.
//!
//! Work is split into fixed-size chunks, each chunk owns the stream
//! `key.replicate(chunk)`, and results are concatenated in chunk order, so
//! the output does not depend on the number of worker threads.

use rand::rngs::SmallRng;
use rayon::prelude::*;

use crate::rng::StreamKey;

/// Draws per chunk for [`par_draws`].
pub const CHUNK: usize = 4096;

/// `n` i.i.d. draws of `f`.
pub fn par_draws<T, F>(key: StreamKey, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut SmallRng) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = key.replicate(c as u64).rng();
            let len = CHUNK.min(n - c * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// One task per replicate index, each handed its own stream key.
pub fn par_replicates<T, F>(key: StreamKey, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, StreamKey) -> T + Sync,
{
    (0..n).into_par_iter().map(|i| f(i, key.replicate(i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::ModuleId;
    use rand::Rng;

    #[test]
    fn draws_do_not_depend_on_pool_size() {
        let key = StreamKey::new(9, ModuleId::Spine);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| par_draws(key, 3 * CHUNK + 17, |r| r.random::<u64>()))
        };
        assert_eq!(run(1), run(4));
    }
}
