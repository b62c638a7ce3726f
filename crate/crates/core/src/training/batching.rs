use rand::seq::SliceRandom;

use crate::rng;

/// Shuffle `0..lengths.len()` and pack consecutive sequences while the
/// padded size (count × longest) stays within `budget` frames. A sequence
/// longer than the budget forms its own batch.
pub fn pack_batches(lengths: &[usize], budget: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng::stream_parts(seed, &["batches", &epoch.to_string()]));
    let mut out = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut longest = 0;
    for i in order {
        let l = longest.max(lengths[i]);
        if !cur.is_empty() && l * (cur.len() + 1) > budget {
            out.push(std::mem::take(&mut cur));
            longest = 0;
        }
        longest = longest.max(lengths[i]);
        cur.push(i);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Endless deterministic stream of batches, reshuffled every epoch.
#[derive(Debug, Clone)]
pub struct BatchStream {
    lengths: Vec<usize>,
    budget: usize,
    seed: u64,
    epoch: usize,
    queue: std::collections::VecDeque<Vec<usize>>,
}

impl BatchStream {
    pub fn new(lengths: Vec<usize>, budget: usize, seed: u64) -> Self {
        Self {
            lengths,
            budget,
            seed,
            epoch: 0,
            queue: Default::default(),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            self.queue = pack_batches(&self.lengths, self.budget, self.seed, self.epoch).into();
            self.epoch += 1;
        }
        self.queue.pop_front().unwrap_or_default()
    }
}
