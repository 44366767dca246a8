use std::collections::VecDeque;

use crate::autodiff::Tensor;

/// Where one window slot takes its vector from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Index into the stored previous vectors, oldest first.
    Previous(usize),
    Current,
}

/// Window layout for `available` stored previous vectors and window `k`:
/// oldest first, current last. Missing leading slots repeat the earliest
/// available vector, which is the current one at the start of a scene.
pub fn window_slots(available: usize, k: usize) -> Vec<Slot> {
    assert!(k >= 1);
    let used = available.min(k - 1);
    let skip = available - used;
    let earliest = if used > 0 {
        Slot::Previous(skip)
    } else {
        Slot::Current
    };
    let mut slots = vec![earliest; k - 1 - used];
    slots.extend((skip..available).map(Slot::Previous));
    slots.push(Slot::Current);
    slots
}

/// Feature vectors of the most recent `k − 1` utterances of one scene.
#[derive(Debug, Clone)]
pub struct SceneContext {
    capacity: usize,
    previous: VecDeque<Tensor>,
}

impl SceneContext {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "window must be positive");
        SceneContext {
            capacity: window - 1,
            previous: VecDeque::with_capacity(window),
        }
    }

    /// Call at every scene boundary.
    pub fn clear(&mut self) {
        self.previous.clear();
    }

    /// Records the feature vector of the utterance just processed.
    pub fn push(&mut self, h: Tensor) {
        if self.capacity == 0 {
            return;
        }
        if self.previous.len() == self.capacity {
            self.previous.pop_front();
        }
        self.previous.push_back(h);
    }

    pub fn len(&self) -> usize {
        self.previous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.previous.is_empty()
    }

    pub fn previous(&self) -> impl ExactSizeIterator<Item = &Tensor> {
        self.previous.iter()
    }

    /// Stored vectors as one slice, oldest first.
    pub fn history(&mut self) -> &[Tensor] {
        self.previous.make_contiguous()
    }

    /// The `k` window vectors around `current`, oldest first.
    pub fn context_vectors<'a>(&'a self, current: &'a Tensor) -> Vec<&'a Tensor> {
        window_slots(self.previous.len(), self.capacity + 1)
            .into_iter()
            .map(|s| match s {
                Slot::Previous(i) => &self.previous[i],
                Slot::Current => current,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> Tensor {
        Tensor::vector(vec![x])
    }

    fn values(ts: &[&Tensor]) -> Vec<f64> {
        ts.iter().map(|t| t.item()).collect()
    }

    #[test]
    fn scene_start_repeats_current() {
        let ctx = SceneContext::new(4);
        let h = v(7.0);
        assert_eq!(values(&ctx.context_vectors(&h)), vec![7.0; 4]);
    }

    #[test]
    fn partial_history_clamps_to_earliest() {
        let mut ctx = SceneContext::new(3);
        ctx.push(v(0.0));
        assert_eq!(values(&ctx.context_vectors(&v(1.0))), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn full_history_is_the_true_last_k() {
        let mut ctx = SceneContext::new(3);
        for i in 0..5 {
            ctx.push(v(i as f64));
        }
        assert_eq!(ctx.len(), 2);
        assert_eq!(values(&ctx.context_vectors(&v(5.0))), vec![3.0, 4.0, 5.0]);
        ctx.clear();
        assert_eq!(values(&ctx.context_vectors(&v(9.0))), vec![9.0; 3]);
    }

    #[test]
    fn window_of_one_never_stores() {
        let mut ctx = SceneContext::new(1);
        ctx.push(v(1.0));
        assert!(ctx.is_empty());
        assert_eq!(values(&ctx.context_vectors(&v(2.0))), vec![2.0]);
    }

    #[test]
    fn slots_layout() {
        assert_eq!(window_slots(0, 3), vec![Slot::Current; 3]);
        assert_eq!(
            window_slots(5, 3),
            vec![Slot::Previous(3), Slot::Previous(4), Slot::Current]
        );
    }
}
