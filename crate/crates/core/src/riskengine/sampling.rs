use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Order in which cards are drawn: a uniformly random permutation of
/// `0..population`, produced lazily by a forward Fisher–Yates shuffle driven
/// by ChaCha20 seeded from a 64-bit seed (`ChaCha20Rng::seed_from_u64`).
///
/// Taking the first `k` items yields exactly the first `k` entries of
/// [`sample_plan`] for the same seed.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    rng: ChaCha20Rng,
    order: Vec<usize>,
    next: usize,
}

impl SamplePlan {
    pub fn new(seed: u64, population: usize) -> Self {
        SamplePlan {
            rng: ChaCha20Rng::seed_from_u64(seed),
            order: (0..population).collect(),
            next: 0,
        }
    }
}

impl Iterator for SamplePlan {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let n = self.order.len();
        if self.next >= n {
            return None;
        }
        let i = self.next;
        let j = self.rng.random_range(i..n);
        self.order.swap(i, j);
        self.next += 1;
        Some(self.order[i])
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.order.len() - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SamplePlan {}

/// The full draw order for `seed`.
pub fn sample_plan(seed: u64, population: usize) -> Vec<usize> {
    SamplePlan::new(seed, population).collect()
}
