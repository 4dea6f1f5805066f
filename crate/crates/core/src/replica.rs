//! Seed derivation and worker-count independent replica execution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Replicas are handed to workers in blocks of this size; results are
/// collected in replica order, so aggregation never depends on scheduling.
pub const CHUNK: usize = 256;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, stable across builds and platforms.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of replica `index` of command `tag` under `master`.
pub fn derive_seed(master: u64, index: u64, tag: &str) -> u64 {
    splitmix(splitmix(master ^ tag_hash(tag)).wrapping_add(splitmix(index)))
}

pub fn replica_rng(master: u64, index: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index, tag))
}

/// Seeded replica execution on a fixed number of worker threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replicas<'a> {
    pub master: u64,
    pub tag: &'a str,
    pub workers: usize,
}

impl<'a> Replicas<'a> {
    pub fn new(master: u64, tag: &'a str) -> Self {
        Replicas { master, tag, workers: 1 }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        Replicas { workers: workers.max(1), ..self }
    }

    /// `f(index, rng)` for every replica, in index order.
    pub fn run<T, F>(&self, reps: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
    {
        let job = || {
            (0..reps as usize)
                .into_par_iter()
                .with_min_len(CHUNK)
                .map(|i| f(i as u64, &mut replica_rng(self.master, i as u64, self.tag)))
                .collect()
        };
        match rayon::ThreadPoolBuilder::new().num_threads(self.workers).build() {
            Ok(pool) => pool.install(job),
            Err(_) => job(),
        }
    }

    /// First few derived seeds, for the run manifest.
    pub fn seeds(&self, count: u64) -> Vec<u64> {
        (0..count).map(|i| derive_seed(self.master, i, self.tag)).collect()
    }
}
