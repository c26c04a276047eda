use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Groups claim indices into batches of equal length.
///
/// `lengths[i]` is the row count of claim `i`. Each length bucket is shuffled
/// and cut into chunks of at most `batch_size` (the last chunk may be short),
/// then the batch order itself is shuffled. The same `epoch_seed` always
/// yields the same batches.
pub fn batch_by_length(lengths: &[usize], batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &len) in lengths.iter().enumerate() {
        buckets.entry(len).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, mut idx) in buckets {
        idx.shuffle(&mut rng);
        batches.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}
