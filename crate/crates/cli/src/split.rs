//! Scene-level train/val/test partition.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default split proportions in scenes: 75 train, 5 val, 5 test.
pub const DEFAULT_SPLIT_RATIOS: [u32; 3] = [75, 5, 5];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub ratios: [u32; 3],
    pub seed: u64,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// Apportions `n` items to the ratios by largest remainder; ties in the
/// remainder go to the earlier bucket.
pub fn apportion(n: usize, ratios: [u32; 3]) -> [usize; 3] {
    let total: u64 = ratios.iter().map(|r| *r as u64).sum();
    assert!(total > 0, "ratios must not all be zero");
    let mut counts = [0usize; 3];
    let mut rems = [(0u64, 0usize); 3];
    for k in 0..3 {
        let exact = n as u64 * ratios[k] as u64;
        counts[k] = (exact / total) as usize;
        rems[k] = (exact % total, k);
    }
    let left = n - counts.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, k) in rems.iter().take(left) {
        counts[*k] += 1;
    }
    counts
}

/// Shuffles scene ids with a seeded stream and cuts them into the three
/// buckets. Each bucket is returned sorted.
pub fn split_scenes(scenes: &[u64], ratios: [u32; 3], seed: u64) -> SplitManifest {
    let mut ids = scenes.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [a, b, _] = apportion(ids.len(), ratios);
    let bucket = |r: std::ops::Range<usize>| {
        let mut v = ids[r].to_vec();
        v.sort_unstable();
        v
    };
    SplitManifest {
        ratios,
        seed,
        train: bucket(0..a),
        val: bucket(a..a + b),
        test: bucket(a + b..ids.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ratios_give_seventy_five_five_five() {
        assert_eq!(apportion(85, DEFAULT_SPLIT_RATIOS), [75, 5, 5]);
        assert_eq!(apportion(17, DEFAULT_SPLIT_RATIOS), [15, 1, 1]);
        assert_eq!(apportion(1, DEFAULT_SPLIT_RATIOS), [1, 0, 0]);
        assert_eq!(apportion(0, DEFAULT_SPLIT_RATIOS), [0, 0, 0]);
    }

    #[test]
    fn split_is_a_disjoint_cover() {
        let ids: Vec<u64> = (0..40).collect();
        let m = split_scenes(&ids, DEFAULT_SPLIT_RATIOS, 3);
        let mut all: Vec<u64> = m.train.iter().chain(&m.val).chain(&m.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(m, split_scenes(&ids, DEFAULT_SPLIT_RATIOS, 3));
    }
}
