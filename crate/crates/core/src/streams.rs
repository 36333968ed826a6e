//! Reproducible random streams and the batched parallel runner.
//!
//! A run is split into fixed-size batches. Batch `b` of a cell draws from a
//! ChaCha8 generator keyed by the cell seed with stream id `b`, so results do
//! not depend on how rayon schedules the batches. Batch summaries are merged
//! sequentially in batch order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const BATCH_SIZE: usize = 65_536;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a cell seed from a master seed and cell coordinates.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    let mut h = splitmix(master);
    for &c in coords {
        h = splitmix(h ^ splitmix(c));
    }
    h
}

/// Generator for batch `batch` of the cell keyed by `seed`.
pub fn batch_rng(seed: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

/// Run `total` draws split into batches; `f(rng, len)` handles one batch.
/// Results come back in batch order.
pub fn run_batches<T, F>(seed: u64, total: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    let n_batches = total.div_ceil(BATCH_SIZE);
    (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let len = BATCH_SIZE.min(total - b * BATCH_SIZE);
            let mut rng = batch_rng(seed, b as u64);
            f(&mut rng, len)
        })
        .collect()
}

/// Running mean and sum of squared deviations (Welford), mergeable with
/// Chan's pairwise update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn merged<'a, I: IntoIterator<Item = &'a Moments>>(parts: I) -> Moments {
        let mut acc = Moments::default();
        for p in parts {
            acc.merge(p);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn batches_are_schedule_independent() {
        let run = || {
            run_batches(derive_seed(7, &[1, 2]), 200_000, |rng, len| {
                let mut m = Moments::default();
                for _ in 0..len {
                    m.push(rng.random::<f64>());
                }
                m
            })
        };
        let a = run();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(run);
        assert_eq!(a, b);
        let m = Moments::merged(&a);
        assert_eq!(m.count, 200_000);
        assert!((m.mean - 0.5).abs() < 5.0 * m.std_error());
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert_eq!(a.count, whole.count);
        assert!((a.mean - whole.mean).abs() < 1e-12);
        assert!((a.m2 - whole.m2).abs() < 1e-9 * whole.m2);
    }

    #[test]
    fn distinct_cells_get_distinct_seeds() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
    }
}
