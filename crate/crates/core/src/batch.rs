//! Deterministic data-parallel gradient accumulation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffcore::{Gradients, ParamStore};
use crate::error::Result;

/// Items per work unit. Gradients are summed inside a chunk in item order and
/// chunks are merged in chunk order, so results do not depend on thread count.
pub const CHUNK: usize = 8;

/// Sum `f(item)` gradients over `items` and collect the per-item statistics.
pub fn accumulate<T, S, F>(store: &ParamStore, items: &[T], f: F) -> Result<(Gradients, Vec<S>)>
where
    T: Sync,
    S: Send,
    F: Fn(&T) -> Result<(Gradients, S)> + Sync,
{
    let parts: Vec<(Gradients, Vec<S>)> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::new(store.len());
            let mut stats = Vec::with_capacity(chunk.len());
            for item in chunk {
                let (g, s) = f(item)?;
                grads.absorb(g);
                stats.push(s);
            }
            Ok((grads, stats))
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::new(store.len());
    let mut all = Vec::with_capacity(items.len());
    for (g, s) in parts {
        total.absorb(g);
        all.extend(s);
    }
    Ok((total, all))
}

/// RNG for one training item, independent of scheduling.
pub fn item_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64 + 1);
    rng
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64 + 1));
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    order
}
