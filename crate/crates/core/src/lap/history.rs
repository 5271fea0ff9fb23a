use std::collections::VecDeque;

/// Fixed-capacity ring buffer of recent losses, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    capacity: usize,
    entries: VecDeque<f64>,
}

impl LossHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    /// Appends `loss`, returning the evicted entry when at capacity.
    pub fn push(&mut self, loss: f64) -> Option<f64> {
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(loss);
        evicted
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.entries.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().sum()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.entries.is_empty()).then(|| self.sum() / self.entries.len() as f64)
    }
}
