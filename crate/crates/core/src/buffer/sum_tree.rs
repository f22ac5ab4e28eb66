/// Binary sum-tree over non-negative leaf weights.
///
/// Array-backed with a power-of-two leaf count: node `k` has children `2k` and
/// `2k + 1`, the root is node 1 and leaf `i` lives at `leaves + i`. Every
/// internal node is recomputed as the sum of its two children on update,
/// never adjusted by a delta, so drift cannot accumulate.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn with_capacity(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    /// Number of leaves (a power of two).
    pub fn capacity(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.leaves + leaf]
    }

    pub fn set(&mut self, leaf: usize, weight: f64) {
        debug_assert!(weight >= 0.0 && weight.is_finite());
        let mut k = self.leaves + leaf;
        self.nodes[k] = weight;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Doubles the leaf count until at least `capacity` leaves exist.
    pub fn grow(&mut self, capacity: usize) {
        if capacity <= self.leaves {
            return;
        }
        let mut grown = SumTree::with_capacity(capacity);
        grown.nodes[grown.leaves..grown.leaves + self.leaves]
            .copy_from_slice(&self.nodes[self.leaves..]);
        for k in (1..grown.leaves).rev() {
            grown.nodes[k] = grown.nodes[2 * k] + grown.nodes[2 * k + 1];
        }
        *self = grown;
    }

    /// Leaf whose cumulative-weight interval contains `mass`, for
    /// `0 <= mass < total()`. Zero-weight leaves are never returned while the
    /// total is positive.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            let right = self.nodes[2 * k + 1];
            if mass < left || right <= 0.0 {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }

    pub fn max_leaf(&self) -> f64 {
        self.nodes[self.leaves..].iter().copied().fold(0.0, f64::max)
    }

    /// Largest violation of `node == left + right`, relative to the root.
    pub fn max_relative_violation(&self) -> f64 {
        let scale = self.total().abs().max(f64::MIN_POSITIVE);
        (1..self.leaves)
            .map(|k| (self.nodes[k] - self.nodes[2 * k] - self.nodes[2 * k + 1]).abs() / scale)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_tracks_updates() {
        let mut t = SumTree::with_capacity(8);
        for i in 0..8 {
            t.set(i, 1.0);
        }
        assert_eq!(t.total(), 8.0);
        t.set(3, 5.0);
        assert_eq!(t.total(), 12.0);
        assert_eq!(t.get(3), 5.0);
    }

    #[test]
    fn find_walks_cumulative_intervals() {
        let mut t = SumTree::with_capacity(4);
        t.set(0, 1.0);
        t.set(1, 2.0);
        t.set(3, 1.0);
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(0.999), 0);
        assert_eq!(t.find(1.0), 1);
        assert_eq!(t.find(2.999), 1);
        assert_eq!(t.find(3.0), 3);
        // rounding past the end still lands on a weighted leaf
        assert_eq!(t.find(4.5), 3);
    }

    #[test]
    fn grow_preserves_leaves() {
        let mut t = SumTree::with_capacity(2);
        t.set(0, 0.5);
        t.set(1, 1.5);
        t.grow(5);
        assert_eq!(t.capacity(), 8);
        assert_eq!(t.total(), 2.0);
        t.set(4, 1.0);
        assert_eq!(t.total(), 3.0);
        assert_eq!(t.find(2.5), 4);
        assert_eq!(t.max_relative_violation(), 0.0);
    }

    #[test]
    fn single_leaf_tree() {
        let mut t = SumTree::with_capacity(1);
        t.set(0, 0.25);
        assert_eq!(t.total(), 0.25);
        assert_eq!(t.find(0.1), 0);
    }
}
