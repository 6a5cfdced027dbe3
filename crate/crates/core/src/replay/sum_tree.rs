/// Binary sum tree over a fixed number of leaves.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(leaves: usize) -> Self {
        let base = leaves.max(1).next_power_of_two();
        Self {
            leaves,
            base,
            nodes: vec![0.0; 2 * base],
        }
    }

    pub fn capacity(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.base + i]
    }

    pub fn set(&mut self, i: usize, p: f64) {
        assert!(i < self.leaves, "leaf {i} out of range");
        assert!(p >= 0.0 && p.is_finite(), "priority must be finite and non-negative");
        let mut n = self.base + i;
        self.nodes[n] = p;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative interval contains `u ∈ [0, total)`.
    ///
    /// Zero-mass leaves are never returned while any leaf has mass.
    pub fn find(&self, u: f64) -> usize {
        let mut u = u.clamp(0.0, self.total());
        let mut n = 1;
        while n < self.base {
            let left = self.nodes[2 * n];
            let right = self.nodes[2 * n + 1];
            if u < left || right <= 0.0 {
                n *= 2;
            } else {
                u -= left;
                n = 2 * n + 1;
            }
        }
        n - self.base
    }

    /// Sum of leaves by a linear scan.
    pub fn leaf_sum(&self) -> f64 {
        self.nodes[self.base..self.base + self.leaves].iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn find_walks_cumulative_mass() {
        let mut t = SumTree::new(5);
        for (i, p) in [1.0, 0.0, 2.0, 3.0, 0.5].into_iter().enumerate() {
            t.set(i, p);
        }
        assert_eq!(t.total(), 6.5);
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(0.999), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.999), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(6.2), 4);
        assert_eq!(t.find(6.5), 4);
    }

    proptest! {
        #[test]
        fn root_tracks_leaves(ops in prop::collection::vec((0usize..37, 0.0f64..10.0), 1..200)) {
            let mut t = SumTree::new(37);
            for (i, p) in ops {
                t.set(i, p);
                let s = t.leaf_sum();
                prop_assert!((t.total() - s).abs() <= 1e-6 * s.max(1.0));
            }
        }

        #[test]
        fn find_matches_linear_scan(ps in prop::collection::vec(0.0f64..5.0, 1..40), frac in 0.0f64..1.0) {
            let mut t = SumTree::new(ps.len());
            for (i, &p) in ps.iter().enumerate() {
                t.set(i, p);
            }
            prop_assume!(t.total() > 0.0);
            let u = frac * t.total();
            let mut acc = 0.0;
            let mut want = ps.len() - 1;
            for (i, &p) in ps.iter().enumerate() {
                acc += p;
                if u < acc {
                    want = i;
                    break;
                }
            }
            let got = t.find(u);
            // Rounding in partial sums may move u across a boundary of width ~1e-12.
            prop_assert!(got == want || ps[got] > 0.0 && (acc - u).abs() < 1e-9, "{got} vs {want}");
        }
    }
}
