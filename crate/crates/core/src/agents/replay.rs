use std::collections::VecDeque;

use rand::Rng;

/// One transition `<s, a, r, s'>`. `next_busy` is the busy-slot count of
/// `s'`, which fixes its feasibility mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience<T> {
    pub state: Vec<T>,
    pub action: usize,
    pub reward: T,
    pub next_state: Vec<T>,
    pub next_busy: u32,
}

/// Fixed-capacity FIFO of experiences.
#[derive(Debug, Clone)]
pub struct ReplayMemory<T> {
    buffer: VecDeque<Experience<T>>,
    capacity: usize,
}

impl<T: Clone> ReplayMemory<T> {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            buffer: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        }
    }

    pub fn push(&mut self, exp: Experience<T>) {
        if self.capacity == 0 {
            return;
        }
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(exp);
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience<T>> {
        self.buffer.iter()
    }

    /// `count` experiences drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<&Experience<T>> {
        if self.buffer.is_empty() {
            return Vec::new();
        }
        (0..count)
            .map(|_| &self.buffer[rng.random_range(0..self.buffer.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(i: usize) -> Experience<f64> {
        Experience {
            state: vec![i as f64],
            action: i,
            reward: 0.0,
            next_state: vec![],
            next_busy: 0,
        }
    }

    #[test]
    fn fifo_eviction_under_many_pushes() {
        let mut mem = ReplayMemory::new(1000);
        for i in 0..1_000_000 {
            mem.push(exp(i));
            assert!(mem.len() <= 1000);
        }
        let actions: Vec<usize> = mem.iter().map(|e| e.action).collect();
        let want: Vec<usize> = (999_000..1_000_000).collect();
        assert_eq!(actions, want);
    }

    #[test]
    fn sampling_stays_in_buffer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mem = ReplayMemory::new(10);
        assert!(mem.sample(4, &mut rng).is_empty());
        for i in 0..25 {
            mem.push(exp(i));
        }
        let batch = mem.sample(64, &mut rng);
        assert_eq!(batch.len(), 64);
        assert!(batch.iter().all(|e| (15..25).contains(&e.action)));
    }
}
